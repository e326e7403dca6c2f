from pathlib import Path

from django import forms
from django.conf import settings

from meanfield.conf import solver_setting
from meanfield.descriptors import load_descriptor

VERBS = [
    ("simulate-nplayer", "Simulate the N-player system"),
    ("solve-mfg", "Solve the mean field fixed point"),
    ("nash-gap", "Estimate the Nash gap along an N ladder"),
    ("chaos-study", "Empirical measure vs conditional flow along an N ladder"),
    ("counterexample", "Exact costs of the degenerate counter-example"),
    ("solve-pde", "HJB and forward equation against a flat flow"),
    ("validate-model", "Probe the standing assumptions of a model"),
]

# verbs that read a model descriptor
NEEDS_MODEL = {"simulate-nplayer", "solve-mfg", "nash-gap", "chaos-study", "solve-pde", "validate-model"}
# verbs that walk an N ladder
NEEDS_LADDER = {"simulate-nplayer", "nash-gap", "chaos-study", "counterexample"}

MAX_SEED = 2**64 - 1
# even N goes through full enumeration, 4^N configurations
MAX_EVEN_ENUMERATION = 10


class RunConfigForm(forms.Form):
    verb = forms.ChoiceField(choices=VERBS)
    model = forms.CharField(
        required=False,
        help_text="Path to a JSON model descriptor.",
    )
    n_steps = forms.IntegerField(min_value=1, initial=200, required=False)
    space_nodes = forms.IntegerField(min_value=3, initial=101, required=False)
    damping = forms.FloatField(required=False)
    tol = forms.FloatField(required=False)
    max_iter = forms.IntegerField(min_value=1, required=False)
    mode = forms.ChoiceField(
        choices=[(m, m) for m in ("auto", "pde", "monte_carlo", "exact")],
        initial="auto",
        required=False,
    )
    particles = forms.IntegerField(min_value=1, required=False)
    profile = forms.ChoiceField(
        choices=[(p, p) for p in ("mfg", "rest", "counterexample")],
        initial="mfg",
        required=False,
        help_text="Strategy played by the N players (and fixed best response for solve-mfg).",
    )
    ladder = forms.CharField(
        required=False,
        help_text="Comma separated, strictly increasing list of N.",
    )
    replications = forms.IntegerField(min_value=1, initial=30, required=False)
    reference = forms.ChoiceField(
        choices=[("limit", "limit"), ("empirical", "empirical")],
        initial="limit",
        required=False,
    )
    exact = forms.BooleanField(required=False)
    probes = forms.IntegerField(min_value=1, initial=1000, required=False)
    seed = forms.IntegerField(min_value=0, max_value=MAX_SEED, initial=0, required=False)
    output_dir = forms.CharField(required=False)

    def _default(self, name):
        value = self.cleaned_data.get(name)
        return self.fields[name].initial if value in (None, "") else value

    def clean_ladder(self):
        raw = (self.cleaned_data.get("ladder") or "").strip()
        if not raw:
            return []
        try:
            ladder = [int(part) for part in raw.split(",") if part.strip()]
        except ValueError:
            raise forms.ValidationError("The ladder must be a comma separated list of integers.")
        if any(n < 1 for n in ladder):
            raise forms.ValidationError("Every N must be positive.")
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise forms.ValidationError("The ladder must be strictly increasing.")
        return ladder

    def clean_damping(self):
        damping = self.cleaned_data.get("damping")
        if damping is not None and not 0.0 < damping <= 1.0:
            raise forms.ValidationError("Damping must lie in (0, 1].")
        return damping

    def clean_tol(self):
        tol = self.cleaned_data.get("tol")
        if tol is not None and tol <= 0.0:
            raise forms.ValidationError("The tolerance must be positive.")
        return tol

    def clean(self):
        cleaned = super().clean()
        verb = cleaned.get("verb")
        if not verb:
            return cleaned

        for name in ("n_steps", "space_nodes", "mode", "profile", "replications", "reference", "probes", "seed"):
            cleaned[name] = self._default(name)
        cleaned["damping"] = cleaned.get("damping") or solver_setting("DAMPING")
        cleaned["tol"] = cleaned.get("tol") or solver_setting("TOL")
        cleaned["max_iter"] = cleaned.get("max_iter") or solver_setting("MAX_ITER")
        cleaned["particles"] = cleaned.get("particles") or solver_setting("MC_PARTICLES")

        if verb in NEEDS_MODEL:
            path = (cleaned.get("model") or "").strip()
            if not path:
                self.add_error("model", "This verb needs a model descriptor.")
            elif not Path(path).is_file():
                self.add_error("model", f"Descriptor {path} does not exist.")
            else:
                try:
                    self.coefficients = load_descriptor(path)
                except forms.ValidationError as exc:
                    self.add_error("model", exc.messages)

        if verb in NEEDS_LADDER and not cleaned.get("ladder") and "ladder" not in self.errors:
            self.add_error("ladder", "This verb needs an N ladder.")

        if verb == "counterexample":
            too_big = [n for n in cleaned.get("ladder") or [] if n % 2 == 0 and n > MAX_EVEN_ENUMERATION]
            if too_big:
                self.add_error("ladder", f"Even N above {MAX_EVEN_ENUMERATION} cannot be enumerated: {too_big}.")

        if verb == "nash-gap" and cleaned.get("exact"):
            even = [n for n in cleaned.get("ladder") or [] if n % 2 == 0]
            if even:
                self.add_error("ladder", f"The exact Nash gap covers odd N only: {even}.")

        if not cleaned.get("output_dir"):
            cleaned["output_dir"] = ""
        return cleaned

    def run_config(self) -> dict:
        """JSON-safe echo of the validated configuration."""
        data = dict(self.cleaned_data)
        data.setdefault("output_dir", "")
        return data


def default_output_root() -> Path:
    return Path(getattr(settings, "MEANFIELD", {}).get("OUTPUT_DIR") or solver_setting("OUTPUT_DIR"))
