import hashlib
import json
import sys
from pathlib import Path

from utils.config_manager import get_config


def _to_jsonable(value):
    if hasattr(value, 'tolist'):
        return value.tolist()
    if hasattr(value, 'item'):
        return value.item()
    return str(value)


class AllureHelper:
    """Attaches numeric evidence (arrays, run summaries, CSVs) to Allure when it is switched on"""

    def __init__(self):
        self._attached_content_hashes = set()
        self._allure = None
        self._allure_enabled = None  # Lazy initialization

    @property
    def allure_enabled(self):
        if self._allure_enabled is None:
            self._allure_enabled = self._check_allure_availability()
        return self._allure_enabled

    @property
    def allure(self):
        if self._allure is None and self.allure_enabled:
            try:
                import allure
                self._allure = allure
            except ImportError:
                self._allure = None
        return self._allure

    def _check_allure_availability(self):
        if str(get_config().get('ENABLE_ALLURE', False)).lower() != 'true':
            return False
        try:
            import allure  # noqa: F401
            return True
        except ImportError:
            return False

    def _attach_once(self, content, name, attachment_type):
        """Attach content only once per (name, content) hash"""
        if not self.allure_enabled:
            return
        hash_key = hashlib.md5(f"{name}:{content}".encode()).hexdigest()
        if hash_key in self._attached_content_hashes:
            return
        self._attached_content_hashes.add(hash_key)
        try:
            self.allure.attach(content, name=name, attachment_type=attachment_type)
        except Exception as e:
            # reporting problems never fail a scenario
            print(f"Warning: Could not attach to Allure: {e}", file=sys.stderr)

    def attach_json(self, name, data):
        if not self.allure_enabled:
            return
        self._attach_once(json.dumps(data, indent=2, sort_keys=True, default=_to_jsonable), name,
                          self.allure.attachment_type.JSON)

    def attach_numbers(self, name, expected=None, actual=None, tolerance=None, passed=None):
        """Expected-vs-actual record for a numerical assertion"""
        if not self.allure_enabled:
            return
        result = {"expected": expected, "actual": actual, "tolerance": tolerance}
        if passed is not None:
            result["result"] = "✅ PASS" if passed else "❌ FAIL"
        self.attach_json(name, result)

    def attach_csv(self, path, name=None):
        if not self.allure_enabled:
            return
        path = Path(path)
        if not path.exists():
            return
        self._attach_once(path.read_text(encoding='utf-8'), name or path.name, self.allure.attachment_type.CSV)

    def attach_error(self, error_message, exception=None):
        if not self.allure_enabled:
            return
        details = {"error_message": str(error_message)}
        if exception is not None:
            details["exception_type"] = type(exception).__name__
            details["exception_details"] = str(exception)
        self.attach_json("Error Details", details)


allure_helper = AllureHelper()
