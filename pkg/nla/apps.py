from django.apps import AppConfig


class NlaConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "nla"
