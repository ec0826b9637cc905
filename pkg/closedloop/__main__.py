"""Allows ``python -m closedloop``."""

from .cli import main

raise SystemExit(main())
