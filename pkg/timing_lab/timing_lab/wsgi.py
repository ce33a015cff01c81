"""WSGI entry point serving the manifest and experiment API."""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'timing_lab.settings')

application = get_wsgi_application()
