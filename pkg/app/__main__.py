"""
Позволяет запускать CLI как модуль:
    python -m app locate --record ... --line ... --fault-type AG --group ...
"""
import sys

from main import main

if __name__ == "__main__":
    sys.exit(main())
