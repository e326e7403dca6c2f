from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('verb', models.CharField(help_text="Experiment verb, e.g. 'solve-mfg'.", max_length=32)),
                ('config', models.JSONField(default=dict, help_text='Validated run configuration as passed to the runner.')),
                ('config_hash', models.CharField(db_index=True, help_text='sha256 of the canonical configuration JSON.', max_length=64)),
                ('master_seed', models.DecimalField(decimal_places=0, help_text='64-bit master seed every random stream derives from.', max_digits=20)),
                ('version', models.CharField(max_length=32)),
                ('output_dir', models.CharField(max_length=500)),
                ('status', models.CharField(choices=[('running', 'Running'), ('succeeded', 'Succeeded'), ('failed', 'Failed')], default='running', max_length=16)),
                ('warning', models.BooleanField(default=False, help_text='Set when the run finished but reported extinction or non-convergence.')),
                ('exit_code', models.IntegerField(blank=True, null=True)),
                ('error', models.TextField(blank=True)),
                ('started_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
                ('elapsed_seconds', models.FloatField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-started_at'],
            },
        ),
        migrations.CreateModel(
            name='RunArtifact',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=200)),
                ('sha256', models.CharField(max_length=64)),
                ('size_bytes', models.PositiveBigIntegerField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='artifacts', to='experiments.experimentrun')),
            ],
            options={
                'ordering': ['name'],
            },
        ),
        migrations.AddConstraint(
            model_name='runartifact',
            constraint=models.UniqueConstraint(fields=('run', 'name'), name='unique_artifact_per_run'),
        ),
    ]
