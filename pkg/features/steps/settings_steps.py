import os
from unittest import mock

from behave import when, then

from utils.config_manager import DEFAULTS, get_config
from utils import logger

log = logger.customLogger()


def _load(context, environment, exported=None):
    """Run settings for ``environment`` with only ``exported`` set in the process environment."""
    previous = get_config().environment
    with mock.patch.dict(os.environ):
        for key in DEFAULTS:
            os.environ.pop(key, None)
        os.environ.update(exported or {})
        context.run_settings = get_config(environment).get_run_config()
    get_config(previous)
    log.info(f"Settings for '{environment}': {context.run_settings}")


@when('the settings for environment "{environment}" are loaded')
def step_load_settings(context, environment):
    _load(context, environment)


@when('the settings for environment "{environment}" are loaded with {key} exported as {value}')
def step_load_settings_exported(context, environment, key, value):
    _load(context, environment, {key: value})


@then('the run setting "{key}" is {expected:d}')
def step_check_int_setting(context, key, expected):
    actual = context.run_settings[key]
    assert actual == expected, f"{key} = {actual!r}, expected {expected}"


@then('the run setting "{key}" is "{expected}"')
def step_check_text_setting(context, key, expected):
    actual = context.run_settings[key]
    assert actual == expected, f"{key} = {actual!r}, expected {expected!r}"
