import argparse
import sys

# core imports
from core.utils import APP_NAME, APP_VERSION
from core.env_manager import EXPERIMENTS, ConfigError, parse_config, parse_flags
from core.runner import EXIT_CONFIG, run


def build_parser():
    parser = argparse.ArgumentParser(
        prog="phasefield-lab",
        description=f"{APP_NAME} {APP_VERSION}",
        epilog=(
            "Any config key may be overridden as --key=value, e.g. --theta=0 "
            "--n=32,64,128 --jobs=4 --overwrite=true."
        ),
    )
    parser.add_argument("command", choices=EXPERIMENTS, help="experiment to run")
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--version", action="version", version=APP_VERSION)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    try:
        flags = parse_flags(rest)
        flags["experiment"] = args.command
        cfg = parse_config(args.config, flags)
    except ConfigError as e:
        print(f"❌ Invalid configuration ({e.key}): {e}")
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"❌ {e}")
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
