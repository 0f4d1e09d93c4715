"""
WSGI entry point serving the experiment-run API of kdpcproject.

``runserver`` and production WSGI servers both load ``application`` from here.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "kdpcproject.settings")

application = get_wsgi_application()
