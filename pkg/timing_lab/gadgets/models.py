from django.db import models
import uuid

from .config import config_hash


class RunManifest(models.Model):
    """Everything needed to reproduce one experiment run"""
    SUBCOMMAND_CHOICES = [
        ('plru-pa', 'PLRU presence/absence magnifier'),
        ('plru-reorder', 'PLRU reorder magnifier'),
        ('arbitrary', 'Arbitrary-replacement magnifier'),
        ('arith', 'Arithmetic magnifier'),
        ('repetition', 'Repetition gadget'),
        ('granularity', 'Granularity sweep'),
        ('spectre-back', 'SpectreBack'),
        ('classify', 'Hit/miss classifier'),
        ('miss-prob', 'PAR miss probability'),
        ('race', 'Single racing gadget'),
    ]

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    subcommand = models.CharField(max_length=32, choices=SUBCOMMAND_CHOICES)
    config = models.JSONField(default=dict)
    seed = models.PositiveBigIntegerField(default=0)
    output_paths = models.JSONField(default=list, blank=True)
    artifact_version = models.CharField(max_length=20)
    summary = models.JSONField(default=dict, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        db_table = 'run_manifests'
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.subcommand} (seed {self.seed}) {self.created_at:%Y-%m-%d %H:%M}"

    @property
    def config_hash(self):
        return config_hash(self.config)

    def as_manifest(self):
        """Same shape as the JSON manifest written next to the CSV"""
        return {
            'subcommand': self.subcommand,
            'config': self.config,
            'config_hash': self.config_hash,
            'seed': self.seed,
            'output_paths': self.output_paths,
            'artifact_version': self.artifact_version,
            'summary': self.summary,
        }
