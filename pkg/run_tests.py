import argparse
import json
import os
import shutil
import subprocess
import sys
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from utils.config_manager import get_config
from utils.enhanced_reporter import TestMetrics, TestRunReport
from utils import logger

log = logger.customLogger()

JSON_REPORT = 'reports/results.json'
ALLURE_RESULTS = 'reports/allure-results'

# test type -> behave tag expression
TEST_TYPE_TAGS = {
    'smoke': ['@smoke'],
    'acceptance': ['@acceptance'],
    'cli': ['@cli'],
    'fast': ['~@slow'],
    'all': [],
}


class TestConfig:
    """Session settings shared with the behave subprocess through the environment"""

    def __init__(self, env: str = 'dev'):
        os.environ['BRANCHFIT_ENV'] = env
        self.shared_log_file = self._setup_shared_log()
        self.config = get_config(env)

    def _setup_shared_log(self) -> str:
        current_time = datetime.strftime(datetime.now(), '%d_%m_%Y_%I_%M_%S%p')
        shared_log_file = f"logs/Log_{current_time}.log"
        os.environ['SHARED_LOG_FILE'] = shared_log_file
        return shared_log_file

    def get_env_var(self, key: str, default=None):
        return str(self.config.get(key, default))




def build_behave_command(test_type: str, tags: Optional[str] = None) -> List[str]:
    cmd = [sys.executable, '-m', 'behave', 'features']
    test_tags = list(TEST_TYPE_TAGS.get(test_type, []))
    if tags:
        test_tags.extend(t.strip() for t in tags.split(',') if t.strip())
    for tag in test_tags:
        cmd.extend(['-t', tag])
    return cmd


def add_formatters(cmd: List[str], output_file: str, test_config: TestConfig):
    cmd.extend(['-f', 'json', '-o', output_file])
    cmd.extend(['-f', 'pretty'])
    if test_config.get_env_var('ENABLE_ALLURE', 'false').lower() == 'true':
        cmd.extend(['-f', 'allure_behave.formatter:AllureFormatter', '-o', ALLURE_RESULTS])
        log.info("Allure formatter added to command")


def execute_subprocess_with_output(cmd: List[str], env: Dict[str, str]) -> Tuple[int, str]:
    """Stream behave output to the console while capturing it"""
    try:
        process = subprocess.Popen(cmd, env=env, stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
                                   text=True, bufsize=1)
        captured = []
        for line in iter(process.stdout.readline, ''):
            captured.append(line)
            print(line, end='')
        process.stdout.close()
        return process.wait(), ''.join(captured)
    except Exception as e:
        log.error(f"Error executing subprocess: {e}")
        return 1, str(e)


def load_results(json_file_path: str = JSON_REPORT) -> List[Dict]:
    path = Path(json_file_path)
    if not path.exists():
        return []
    content = path.read_text(encoding='utf-8').strip()
    if not content:
        return []
    try:
        data = json.loads(content)
    except json.JSONDecodeError as e:
        log.warning(f"Could not parse {path}: {e}")
        return []
    return data if isinstance(data, list) else [data]


def failed_scenarios(features: List[Dict]) -> List[Dict]:
    failures = []
    for feature in features:
        for element in feature.get('elements', []):
            if element.get('type') != 'scenario':
                continue
            for step in element.get('steps', []):
                result = step.get('result', {})
                if result.get('status') in ('failed', 'error'):
                    failures.append({
                        'feature': feature.get('name', 'Unknown Feature'),
                        'scenario': element.get('name', 'Unknown Scenario'),
                        'location': element.get('location', ''),
                        'step': f"{step.get('keyword', '').strip()} {step.get('name', '')}",
                        'error': result.get('error_message', 'No error message'),
                    })
                    break
    return failures


def display_failure_summary(features: List[Dict]):
    failures = failed_scenarios(features)
    if not failures:
        return
    print("\n" + "=" * 60)
    print(f"❌ {len(failures)} failing scenario(s)")
    print("=" * 60)
    for item in failures:
        print(f"\n🔴 {item['feature']} :: {item['scenario']} ({item['location']})")
        print(f"   step: {item['step']}")
        error = item['error'] if isinstance(item['error'], str) else "\n".join(item['error'])
        for line in error.strip().splitlines()[-5:]:
            print(f"   {line}")


def display_test_summary(features: List[Dict]):
    summary = TestMetrics().calculate_metrics(features)['summary']
    print("\n" + "=" * 60)
    print(f"📊 {summary['total_scenarios']} scenarios: ✅ {summary['passed_scenarios']} passed, "
          f"❌ {summary['failed_scenarios']} failed, ⏭️ {summary['skipped_scenarios']} skipped "
          f"in {summary['total_duration']}s")
    print("=" * 60)


def cleanup_reports_folder():
    reports = Path('reports')
    if not reports.exists():
        return
    for item in reports.iterdir():
        try:
            if item.is_dir():
                shutil.rmtree(item)
            else:
                item.unlink()
        except OSError as e:
            log.warning(f"Could not delete {item}: {e}")


def run_tests(test_config: TestConfig, test_type: str, tags: Optional[str] = None) -> bool:
    cleanup_reports_folder()
    for directory in ('reports', 'logs'):
        Path(directory).mkdir(exist_ok=True)

    cmd = build_behave_command(test_type, tags)
    add_formatters(cmd, JSON_REPORT, test_config)
    log.info(f"Running behave: {' '.join(cmd)}")

    return_code, _ = execute_subprocess_with_output(cmd, os.environ.copy())
    features = load_results()
    display_test_summary(features)
    if return_code != 0:
        log.error(f"{test_type} tests failed - analyzing failures...")
        display_failure_summary(features)
    else:
        log.info(f"{test_type} tests completed successfully")
    if features:
        TestRunReport('reports').generate_html_report(features)
    return return_code == 0


def generate_allure_report():
    allure_cli = shutil.which('allure')
    if allure_cli is None:
        print(f"Allure CLI not found; raw results are in {ALLURE_RESULTS}")
        return
    result = subprocess.run([allure_cli, 'generate', ALLURE_RESULTS, '-o', 'reports/allure-report', '--clean'],
                            capture_output=True, text=True)
    if result.returncode == 0:
        print("Allure report generated at: reports/allure-report/index.html")
    else:
        log.warning(f"Allure report generation failed: {result.stderr}")


def main():
    parser = argparse.ArgumentParser(description='Behave runner for the branchfit suite')
    parser.add_argument('--type', choices=sorted(TEST_TYPE_TAGS), default='all', help='Type of tests to run')
    parser.add_argument('--tags', type=str, help='Comma-separated list of extra tag expressions')
    parser.add_argument('--env', choices=['dev', 'ci'], default='dev', help='Settings environment')
    parser.add_argument('--allure', action='store_true', help='Collect Allure results and build the report')
    args = parser.parse_args()

    test_config = TestConfig(args.env)
    if args.allure:
        os.environ['ENABLE_ALLURE'] = 'true'
        log.info("Allure reporting enabled - data will be collected during test execution")

    success = run_tests(test_config, args.type, args.tags)

    if args.allure:
        generate_allure_report()

    if success:
        print("✅ Test execution completed successfully")
        sys.exit(0)
    print("❌ Test execution failed")
    sys.exit(1)


if __name__ == '__main__':
    main()
