import os

CONFIG_DIR = os.path.dirname(os.path.abspath(__file__))
VOTER_SCHEMA_PATH = os.path.join(CONFIG_DIR, "voter_schema.json")

ARTIFACTS_DIR = "artifacts"
RAW_DIR = os.path.join(ARTIFACTS_DIR, "raw")
MOCK_DATA_PATH = os.path.join(RAW_DIR, "mock_voter.csv")
SYNTHETIC_DIR = os.path.join(ARTIFACTS_DIR, "synthetic")
REPORTS_DIR = os.path.join(ARTIFACTS_DIR, "reports")

MANIFEST_FILE = "manifest.json"
TREE_AUDIT_FILE = "tree_audit.json"
LEDGER_FILE = "ledger.json"
TIMINGS_FILE = "timings.json"
REPORT_FILE = "report.json"
SWEEP_REPORT_FILE = "sweep_report.json"
REPLICATE_FILE_PATTERN = "synthetic_{index:02d}.csv"

MLRUNS_URI = "file:./mlruns"
