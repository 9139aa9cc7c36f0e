from main import *

if __name__ == "__main__":
    raise SystemExit(main())
