import json
import logging
import os
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


class ReportManager:
    """Run-report history, one JSON file per run name"""

    def __init__(self, run_name: str, report_dir: Optional[str] = None):
        self.run_name = run_name
        self.report_dir = report_dir or "Reports"
        self.report_file = self._get_report_path()

    def _get_report_path(self) -> str:
        """Relative directories resolve against the repository root"""
        if os.path.isabs(self.report_dir):
            base_dir = self.report_dir
        else:
            root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
            base_dir = os.path.join(root, self.report_dir)
        return os.path.join(base_dir, f"{self.run_name}_reports.json")

    def ensure_directory(self):
        os.makedirs(os.path.dirname(self.report_file), exist_ok=True)

    def load_reports(self, limit: Optional[int] = None) -> List[Dict]:
        """Oldest first; an unreadable history counts as empty"""
        self.ensure_directory()
        if os.path.exists(self.report_file):
            try:
                with open(self.report_file, "r", encoding="utf-8") as f:
                    data = json.load(f)
                if isinstance(data, list):
                    return data if limit is None else data[-limit:]
            except (OSError, json.JSONDecodeError) as e:
                logger.warning("Ignoring unreadable report history %s: %s", self.report_file, e)
        return []

    def save_reports(self, reports: List[Dict]):
        self.ensure_directory()
        with open(self.report_file, "w", encoding="utf-8") as f:
            json.dump(reports, f, indent=2, sort_keys=True)

    def add_report(self, report: Dict) -> List[Dict]:
        """Append a report and return the updated history"""
        reports = self.load_reports()
        reports.append(report)
        self.save_reports(reports)
        return reports

    def best_report(self) -> Optional[Dict]:
        """Highest-accuracy report, earliest one on ties"""
        scored = [r for r in self.load_reports() if r.get("accuracy") is not None]
        if not scored:
            return None
        return max(scored, key=lambda r: r["accuracy"])

    def update_best(self, report: Dict) -> Dict:
        """Record the report and return whichever report is now the best"""
        self.add_report(report)
        return self.best_report()
