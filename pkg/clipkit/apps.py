from django.apps import AppConfig


class ClipkitConfig(AppConfig):
    name = 'clipkit'
    verbose_name = 'SAR vision-language toolkit'
