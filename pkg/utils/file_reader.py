import json
from pathlib import Path
from utils import logger

log = logger.customLogger()

TESTDATA_DIR = Path(__file__).resolve().parent.parent / 'testdata'


def read_file(folder_name, file_name):
    """Load a JSON fixture from testdata/<folder_name>/"""
    path = get_file_with_json_extension(folder_name, file_name)
    try:
        with path.open(mode='r', encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError:
        log.error(f"File not found: {path}")
        raise
    except json.JSONDecodeError as e:
        log.error(f"Error decoding JSON from file: {path}. Error: {e}")
        raise


def fixture_path(folder_name, file_name):
    return TESTDATA_DIR.joinpath(folder_name, file_name)


def get_file_with_json_extension(folder_name, file_name):
    if file_name.endswith('.json'):
        return TESTDATA_DIR.joinpath(folder_name, file_name)
    return TESTDATA_DIR.joinpath(folder_name, f'{file_name}.json')
