from django.apps import AppConfig


class StylizationConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "stylization"
