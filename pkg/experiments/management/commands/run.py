import json
import sys

from django.core.management.base import BaseCommand, CommandError

from experiments.forms import VERBS, RunConfigForm
from experiments.runner import run
from meanfield.exceptions import MeanFieldError

# flag -> form field
OPTION_FIELDS = {
    "model": "model",
    "n_steps": "n_steps",
    "space_nodes": "space_nodes",
    "damping": "damping",
    "tol": "tol",
    "max_iter": "max_iter",
    "mode": "mode",
    "particles": "particles",
    "profile": "profile",
    "ladder": "ladder",
    "replications": "replications",
    "reference": "reference",
    "exact": "exact",
    "probes": "probes",
    "seed": "seed",
    "out": "output_dir",
}


class Command(BaseCommand):
    help = "Run one mean field experiment and write its artifacts plus manifest.json."

    def add_arguments(self, parser):
        parser.add_argument("verb", choices=[v for v, _ in VERBS])
        parser.add_argument("--model", help="JSON model descriptor.")
        parser.add_argument("--n-steps", dest="n_steps", type=int)
        parser.add_argument("--space-nodes", dest="space_nodes", type=int)
        parser.add_argument("--damping", type=float)
        parser.add_argument("--tol", type=float)
        parser.add_argument("--max-iter", dest="max_iter", type=int)
        parser.add_argument("--mode", choices=["auto", "pde", "monte_carlo", "exact"])
        parser.add_argument("--particles", type=int)
        parser.add_argument("--profile", choices=["mfg", "rest", "counterexample"])
        parser.add_argument("--N-ladder", "--ladder", dest="ladder", help="e.g. 3,5,7")
        parser.add_argument("--replications", type=int)
        parser.add_argument("--reference", choices=["limit", "empirical"])
        parser.add_argument("--exact", action="store_true")
        parser.add_argument("--probes", type=int)
        parser.add_argument("--seed", type=int)
        parser.add_argument("--out", help="Run directory (default: OUTPUT_DIR/<verb>-<hash>).")
        parser.add_argument("--config", help="JSON file of defaults; explicit flags win.")

    def _form_data(self, options) -> dict:
        data = {}
        if options.get("config"):
            try:
                with open(options["config"], encoding="utf-8") as fh:
                    data.update(json.load(fh))
            except (OSError, ValueError) as exc:
                raise CommandError(f"Cannot read config {options['config']}: {exc}", returncode=2)
        for option, field in OPTION_FIELDS.items():
            value = options.get(option)
            if value is None or (option == "exact" and not value):
                continue
            data[field] = value
        if isinstance(data.get("ladder"), list):
            data["ladder"] = ",".join(str(n) for n in data["ladder"])
        data["verb"] = options["verb"]
        return data

    def handle(self, *args, **options):
        form = RunConfigForm(data=self._form_data(options))
        if not form.is_valid():
            errors = "; ".join(f"{field}: {' '.join(msgs)}" for field, msgs in form.errors.items())
            raise CommandError(f"Invalid configuration: {errors}", returncode=2)

        verb = form.cleaned_data["verb"]
        try:
            outcome = run(verb, form.run_config(), getattr(form, "coefficients", None))
        except MeanFieldError as exc:
            payload = {"error": type(exc).__name__, "message": str(exc), "verb": verb}
            context = getattr(exc, "context", None)
            if context:
                payload["context"] = context
            self.stderr.write(json.dumps(payload, default=str))
            sys.exit(1)

        style = self.style.WARNING if outcome.warning else self.style.SUCCESS
        self.stdout.write(style(f"{verb}: {len(outcome.artifacts)} file(s) in {outcome.run_dir}"))
