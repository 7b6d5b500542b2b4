#!/usr/bin/env python3
"""spectralab entrypoint (compatibility wrapper).

The application code lives in the spectralab/ package; this file lets the
lab be started as ``python app.py <command> ...`` from a checkout.
"""

from spectralab.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
