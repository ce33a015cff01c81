import uuid

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='RunManifest',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('subcommand', models.CharField(choices=[('plru-pa', 'PLRU presence/absence magnifier'), ('plru-reorder', 'PLRU reorder magnifier'), ('arbitrary', 'Arbitrary-replacement magnifier'), ('arith', 'Arithmetic magnifier'), ('repetition', 'Repetition gadget'), ('granularity', 'Granularity sweep'), ('spectre-back', 'SpectreBack'), ('classify', 'Hit/miss classifier'), ('miss-prob', 'PAR miss probability'), ('race', 'Single racing gadget')], max_length=32)),
                ('config', models.JSONField(default=dict)),
                ('seed', models.PositiveBigIntegerField(default=0)),
                ('output_paths', models.JSONField(blank=True, default=list)),
                ('artifact_version', models.CharField(max_length=20)),
                ('summary', models.JSONField(blank=True, default=dict)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'db_table': 'run_manifests',
                'ordering': ['-created_at'],
            },
        ),
    ]
