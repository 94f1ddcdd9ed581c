from .logger import logger  # noqa

__version__ = 'v0.0.0'  # semantic-version-placeholder
