import argparse
import importlib
import logging
import os
import sys
from typing import List, Optional

import torch
from pydantic import ValidationError

from core.cli import CommandRouter
from core.config import settings
from core.exceptions import ConfigurationError, ToolkitError

logging.basicConfig(
    level=settings.HYCNN_LOG_LEVEL,
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    stream=sys.stderr,
)
logger = logging.getLogger("hycnn")

# The directory where all application folders are located
APPS_DIRECTORY = "apps"


def discover_commands(subparsers) -> List[str]:
    """Mount the `router` of every apps/<name>/router.py on the parser"""
    apps_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), APPS_DIRECTORY)
    logger.debug(f"Searching for apps in: {apps_path}")
    if not os.path.isdir(apps_path):
        logger.error(f"❌ The directory '{APPS_DIRECTORY}' was not found.")
        return []

    mounted = []
    for item_name in sorted(os.listdir(apps_path)):
        app_dir = os.path.join(apps_path, item_name)
        if not os.path.isdir(app_dir) or item_name.startswith(("_", ".")):
            continue
        module_name = f"{APPS_DIRECTORY}.{item_name}.router"
        try:
            router_module = importlib.import_module(module_name)
        except ImportError as e:
            logger.error(f"❌ Failed to import router for '{item_name}': {e}")
            continue
        router_instance = getattr(router_module, "router", None)
        if isinstance(router_instance, CommandRouter):
            names = router_instance.mount(subparsers)
            mounted.extend(names)
            logger.debug(f"✅ Loaded commands {names} from '{item_name}'.")
        else:
            logger.warning(f"⚠️ Could not find a CommandRouter named 'router' in '{module_name}'.")
    return mounted


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hycnn",
        description="Convex network toolkit: constructions, regression, optimal transport and benchmarks.",
    )
    parser.add_argument("--log-level", default=None, help="overrides HYCNN_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    discover_commands(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.log_level:
        logging.getLogger().setLevel(args.log_level.upper())
    if settings.TORCH_THREADS:
        torch.set_num_threads(settings.TORCH_THREADS)

    try:
        return args.handler(args) or 0
    except ValidationError as e:
        error = ConfigurationError(f"Invalid parameters: {e}")
        logger.error(f"❌ {type(error).__name__}: {error.detail}")
        return error.exit_code
    except ToolkitError as e:
        logger.error(f"❌ {type(e).__name__}: {e.detail}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
