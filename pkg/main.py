import logging
import os
import sys

from dotenv import load_dotenv


def get_source_dir():
    """Source/ next to this file"""
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), "Source")


if __name__ == "__main__":
    load_dotenv()
    logging.basicConfig(
        level=os.getenv("PCN_LOG_LEVEL", "INFO").upper(),
        format='%(asctime)s - %(levelname)s - %(message)s',
    )
    sys.path.insert(0, get_source_dir())

    import Cli

    sys.exit(Cli.main(sys.argv[1:]))
