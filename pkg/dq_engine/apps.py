from django.apps import AppConfig


class DqEngineConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'dq_engine'
    verbose_name = 'Decompose-and-Query engine'
