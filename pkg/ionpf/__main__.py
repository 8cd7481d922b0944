#!/usr/bin/env python
"""
Entry point of ``python -m ionpf`` and the ``ionpf`` console script.
"""


def main():
    import sys
    from ionpf.cli import main as cli_main
    sys.exit(cli_main())


if __name__ == '__main__':
    main()
