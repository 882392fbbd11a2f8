import json
import os

import mlflow

from config.paths_config import *
from config.synthesis_config import MLFLOW_EXPERIMENT, SYNTHESIS_CONFIG
from src.custom_exception import CustomException, DataIOError
from src.specks import specks
from src.utility import UtilityReport, chisq_consistency, l1_distance
from src.logger import get_logger

logger = get_logger(__name__)


def log_report_to_mlflow(report: UtilityReport, run_name: str, params: dict = None) -> None:
    mlflow.set_tracking_uri(MLRUNS_URI)
    mlflow.set_experiment(MLFLOW_EXPERIMENT)
    with mlflow.start_run(run_name=run_name):
        for param, value in (params or {}).items():
            mlflow.log_param(param, value)
        if report.specks is not None:
            mlflow.log_metric("specks_mean_ks", report.specks.mean_ks)
        if report.mean_l1 is not None:
            mlflow.log_metric("l1_mean", report.mean_l1)
        if report.chisq is not None:
            for alpha, rate in report.chisq.rates.items():
                mlflow.log_metric(f"chisq_consistency_{alpha}", rate)


class ModelEvaluation:
    def __init__(self, original, replicates, metrics=None, alphas=None, combination_rule=None,
                 output_dir=REPORTS_DIR, threads=1, interactions=False, track=False, run_name="Evaluation"):
        self.original = original
        self.replicates = list(replicates)
        self.metrics = list(SYNTHESIS_CONFIG["metrics"] if metrics is None else metrics)
        self.alphas = tuple(SYNTHESIS_CONFIG["alphas"] if alphas is None else alphas)
        self.combination_rule = combination_rule or SYNTHESIS_CONFIG["combination_rule"]
        self.output_dir = output_dir
        self.threads = threads
        self.interactions = interactions
        self.track = track
        self.run_name = run_name
        self.report = UtilityReport(alphas=self.alphas)

        os.makedirs(self.output_dir, exist_ok=True)
        logger.info("Model evaluation initialized.....")

    def evaluate_specks(self):
        self.report.specks = specks(self.original, self.replicates, threads=self.threads,
                                    interactions=self.interactions)
        self.report.notes.append("SPECKS scores are compared directly, without a matching step")
        logger.info(f"SPECKS mean KS is {self.report.specks.mean_ks}")

    def evaluate_l1(self):
        self.report.l1_per_replicate, self.report.mean_l1 = l1_distance(self.original, self.replicates)
        logger.info(f"Mean l1 distance is {self.report.mean_l1}")

    def evaluate_chisq(self):
        self.report.chisq = chisq_consistency(self.original, self.replicates, self.alphas,
                                              self.combination_rule, threads=self.threads)
        self.report.notes.append(f"synthetic p-values combined by {self.report.chisq.combination_rule}")

    def save_report(self):
        path = os.path.join(self.output_dir, REPORT_FILE)
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(self.report.to_dict(), f, indent=2, sort_keys=True)
                f.write("\n")
        except OSError as e:
            raise DataIOError(f"cannot write {path}", e)
        logger.info(f"Evaluation report saved to {path}")
        return path

    def run(self):
        try:
            logger.info("Starting evaluation pipeline....")
            steps = {"specks": self.evaluate_specks, "l1": self.evaluate_l1, "chisq": self.evaluate_chisq}
            for metric in self.metrics:
                steps[metric]()
            self.save_report()
            if self.track:
                log_report_to_mlflow(self.report, self.run_name, {"replicates": len(self.replicates)})
            logger.info("End of evaluation pipeline...")
            return self.report

        except CustomException as e:
            logger.error(f"Error while evaluation pipeline {e.message}")
            raise
        except Exception as e:
            logger.error(f"Error while evaluation pipeline {e}")
            raise CustomException(str(e), e)
