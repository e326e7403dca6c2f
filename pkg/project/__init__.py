import environ

DEFAULT_SETTINGS = "project.settings.dev"
TEST_SETTINGS = "project.settings.ci"


def settings_module(argv, env=None) -> str:
    """Settings for a manage.py invocation; MFG_SETTINGS overrides, ``test`` runs get the ci settings."""
    env = env or environ.Env()
    default = TEST_SETTINGS if len(argv) > 1 and argv[1] == "test" else DEFAULT_SETTINGS
    return env("MFG_SETTINGS", default=default)
