"""Command-line front end; flags mirror ExportJob one to one.

Exit codes: 0 success; 2 bad flags, bad job, or failed compatibility
check; 3 backend weights missing or unloadable; 4 input image or
feature data unreadable.
"""

from __future__ import annotations

import argparse
import sys

from .backends import BACKEND_NAMES, BUILTIN
from .compat import verify_compat
from .errors import EvgfError, ImageError, JobError, WeightsError
from .evgf import PATHWAY_CODES
from .job import RESAMPLE_POLICIES, ExportJob, export_features


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gamsi-export",
        description="Export expert visual-grounding features (EVGF) from images.",
    )
    parser.add_argument("inputs", nargs="+", metavar="IMAGE",
                        help="input frames, one EVGF frame per image, in order")
    parser.add_argument("--pathway", required=True, choices=sorted(PATHWAY_CODES),
                        help="which expert role the features feed")
    parser.add_argument("--out", required=True, help="output EVGF path")
    parser.add_argument("--k-v", type=int, required=True,
                        help="tokens per frame after resampling")
    parser.add_argument("--d-e", type=int, required=True,
                        help="channels per token after fitting")
    parser.add_argument("--resample", default="average", choices=RESAMPLE_POLICIES,
                        help="spatial resampling policy (default: average)")
    parser.add_argument("--backend", default=BUILTIN, choices=BACKEND_NAMES,
                        help="feature extractor (default: builtin)")
    parser.add_argument("--weights", default=None,
                        help="TorchScript file for a model backend")
    parser.add_argument("--layer", default=None,
                        help="which feature map to export (default: the final one)")
    parser.add_argument("--verify-against", default=None, metavar="CONFIG_JSON",
                        help="after writing, check the file against a core run config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(
            inputs=tuple(args.inputs),
            pathway=args.pathway,
            k_v=args.k_v,
            d_e=args.d_e,
            output=args.out,
            resample=args.resample,
            backend=args.backend,
            weights=args.weights,
            layer=args.layer,
        )
        blob = export_features(job)
    except JobError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except WeightsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ImageError, EvgfError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    print(
        f"wrote {args.out}: {len(args.inputs)} frame(s), "
        f"{args.k_v}x{args.d_e} {args.pathway} features, {len(blob)} bytes"
    )
    if args.verify_against is not None:
        result = verify_compat(args.out, args.verify_against)
        if not result:
            print(f"incompatible: {result.reason}", file=sys.stderr)
            return 2
        print(f"compatible with {args.verify_against}")
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
