import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

# numpy reductions must not depend on the BLAS thread count
for _var in ('OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS', 'OMP_NUM_THREADS'):
    os.environ.setdefault(_var, '1')

BASE_DIR = Path(__file__).resolve().parent.parent
SECRET_KEY = os.getenv('SECRET_KEY', 'sarclip-local-only')
DEBUG = os.getenv('DEBUG', 'False') == 'True'
ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'clipkit.apps.ClipkitConfig',
]

# Command-line toolkit only; nothing is stored in a database.
DATABASES = {}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

SARCLIP = {
    'CONFIG_PATH': os.getenv('SARCLIP_CONFIG', ''),
    'LOG_LEVEL': os.getenv('SARCLIP_LOG_LEVEL', 'INFO'),
    'CAPTION_VERIFIER': os.getenv(
        'SARCLIP_CAPTION_VERIFIER', 'clipkit.captions.RuleBasedVerifier'
    ),
    'FEATURE_STORE': os.getenv('SARCLIP_FEATURE_STORE', 'features.f64'),
    'MAX_REJECTION_RATE': float(os.getenv('SARCLIP_MAX_REJECTION_RATE', '0.01')),
    'THREADS': int(os.getenv('SARCLIP_THREADS', '1')),
}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {'format': '%(asctime)s %(levelname)s %(name)s: %(message)s'},
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'clipkit': {
            'handlers': ['console'],
            'level': SARCLIP['LOG_LEVEL'],
            'propagate': False,
        },
    },
}
