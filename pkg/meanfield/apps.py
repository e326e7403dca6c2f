from django.apps import AppConfig


class MeanfieldConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'meanfield'
    verbose_name = "Mean field games with absorption"
