from .episodes import read_episodes, write_episodes, sidecar_path, write_json, read_json
from .checkpoint import CheckpointHeader, load_checkpoint, save_checkpoint
from .reports import REPORT_COLUMNS, rows_frame, timings_path, write_eval_report, write_loss_curve, write_trace
from .provenance import VerifyResult, verify_artifact
