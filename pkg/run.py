import sys

from src.dyace.main import main

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("Run interrupted", file=sys.stderr)
        sys.exit(130)
