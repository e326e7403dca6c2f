from django.db import models


class ExperimentRun(models.Model):

    class Status(models.TextChoices):
        RUNNING = "running", "Running"
        SUCCEEDED = "succeeded", "Succeeded"
        FAILED = "failed", "Failed"

    verb = models.CharField(
        max_length=32,
        help_text="Experiment verb, e.g. 'solve-mfg'.",
    )
    config = models.JSONField(
        default=dict,
        help_text="Validated run configuration as passed to the runner.",
    )
    config_hash = models.CharField(
        max_length=64,
        db_index=True,
        help_text="sha256 of the canonical configuration JSON.",
    )
    master_seed = models.DecimalField(
        max_digits=20,
        decimal_places=0,
        help_text="64-bit master seed every random stream derives from.",
    )
    version = models.CharField(max_length=32)
    output_dir = models.CharField(max_length=500)

    status = models.CharField(
        max_length=16,
        choices=Status.choices,
        default=Status.RUNNING,
    )
    warning = models.BooleanField(
        default=False,
        help_text="Set when the run finished but reported extinction or non-convergence.",
    )
    exit_code = models.IntegerField(blank=True, null=True)
    error = models.TextField(blank=True)

    # timestamps
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(blank=True, null=True)
    elapsed_seconds = models.FloatField(blank=True, null=True)

    class Meta:
        ordering = ["-started_at"]  # newest first

    def __str__(self):
        return f"{self.verb} [{self.config_hash[:12]}] {self.status}"


class RunArtifact(models.Model):
    run = models.ForeignKey(
        ExperimentRun,
        on_delete=models.CASCADE,
        related_name="artifacts",
    )
    name = models.CharField(max_length=200)
    sha256 = models.CharField(max_length=64)
    size_bytes = models.PositiveBigIntegerField()

    class Meta:
        ordering = ["name"]
        constraints = [
            models.UniqueConstraint(fields=["run", "name"], name="unique_artifact_per_run"),
        ]

    def __str__(self):
        return f"{self.name} ({self.sha256[:12]})"
