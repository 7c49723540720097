import os
import zlib
import shutil
import tempfile
import traceback

import numpy as np

from utils.allure_helper import allure_helper
from utils.config_manager import get_config
from utils import logger

log = logger.customLogger()


def before_all(context):
    """Global setup before all tests"""
    context.scenario_count = 0
    try:
        log.info("Starting test execution...")
        # an exported BRANCHFIT_ENV (set by run_tests.py --env) wins over behave.ini userdata
        environment = os.environ.get('BRANCHFIT_ENV') or context.config.userdata.get('ENV', 'dev')
        os.environ['BRANCHFIT_ENV'] = environment
        context.config_manager = get_config(environment)
        log.info(f"Running tests in '{environment}' environment")
    except Exception as e:
        log.error(f"ERROR during global initialization: {e}")
        log.error(traceback.format_exc())
        raise


def before_feature(context, feature):
    log.info(f"Starting feature: {feature.name}")
    context.feature_name = feature.name


def before_scenario(context, scenario):
    """Each scenario gets its own output directory and a clean numeric state"""
    log.info("###########################################################")
    context.scenario_count += 1
    log.info(f"Starting scenario {context.scenario_count}: {scenario.name}")

    context.workdir = tempfile.mkdtemp(prefix='branchfit_')
    context.rng = np.random.default_rng(zlib.crc32(scenario.name.encode("utf-8")))
    context.error = None

    if allure_helper.allure_enabled:
        try:
            import allure
            allure.dynamic.description(f"Feature: {context.feature_name}")
            for tag in scenario.tags:
                allure.dynamic.tag(tag)
        except Exception:
            pass


def after_step(context, step):
    if step.status == 'failed':
        allure_helper.attach_error(f"Step failed: {step.name}", getattr(step, 'exception', None))


def after_scenario(context, scenario):
    if scenario.status == "failed":
        log.error(f"Test failed: {scenario.name}")
        log.info(f"Scenario output kept for inspection: {context.workdir}")
        return
    shutil.rmtree(context.workdir, ignore_errors=True)
    log.info(f"Scenario completed: {scenario.name} - Status: {scenario.status}")


def after_all(context):
    log.info(f"Test execution completed after {context.scenario_count} scenarios")
    log.info(f"{'=' * 60}")
