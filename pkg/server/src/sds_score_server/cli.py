"""Server entry point.

Examples:
    sds-score-server --mock zeros --port 7431
    sds-score-server --mock degenerate:target.png --port 7431
    sds-score-server --model DeepFloyd/IF-I-XL-v1.0 --device cuda --port 7431
"""

import argparse
import sys


def main(argv=None):
    parser = argparse.ArgumentParser(prog="sds-score-server")
    parser.add_argument("--model", help="huggingface id of the diffusion stage to serve")
    parser.add_argument("--port", type=int, default=7431)
    parser.add_argument("--host", default="0.0.0.0")
    parser.add_argument("--device", default="cuda")
    parser.add_argument("--dtype", default="float16")
    parser.add_argument("--mock", help="zeros | degenerate:PATH")
    args = parser.parse_args(argv)

    if bool(args.model) == bool(args.mock):
        parser.error("exactly one of --model or --mock is required")

    from .server import serve
    if args.mock:
        from .models import DegenerateModel, ZerosModel, load_target_image
        if args.mock == "zeros":
            model = ZerosModel()
        elif args.mock.startswith("degenerate:"):
            model = DegenerateModel(load_target_image(args.mock.split(":", 1)[1]))
        else:
            parser.error(f"unknown mock spec {args.mock!r}")
    else:
        from .models import CascadedDiffusionModel
        try:
            model = CascadedDiffusionModel(args.model, args.device, args.dtype)
        except RuntimeError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1

    try:
        serve(model, args.port, args.host)
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
