import torch
from django.apps import AppConfig
from django.conf import settings


class KineticpdeDiscoveryConfig(AppConfig):
    name = "KineticPDE_Discovery"

    def ready(self):
        """Pins torch to the configured thread count."""

        torch.set_num_threads(settings.KINETIC_TORCH_THREADS)
