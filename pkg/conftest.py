"""Configure Django for pytest, mirroring ``python manage.py test``."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'sarclip.settings')
django.setup()
