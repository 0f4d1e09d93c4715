#!/usr/bin/env python
"""Command-line entry point for the Koopman predictive control toolkit.

Besides Django's own commands this exposes the experiment stages
(generate_data, train, fit_predictor, terminal, simulate, nmpc, report,
pipeline) defined in ``koopman/management/commands``.
"""
import os
import sys


def main():
    """Run administrative and experiment tasks."""
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "kdpcproject.settings")
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed and "
            "available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == "__main__":
    main()
