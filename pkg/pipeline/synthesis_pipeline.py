import os

from config.paths_config import *
from config.synthesis_config import MOCK_DATA_CONFIG, SYNTHESIS_CONFIG
from src.data_ingestion import DataIngestion, write_csv
from src.mock_data import mock_dataset
from src.model_evaluation import ModelEvaluation
from src.run_config import RunConfig
from src.sanitization_plan import SanitizationPlan
from src.synthesizer import Synthesizer

# can run as a batch job
if __name__ == "__main__":

    if not os.path.exists(MOCK_DATA_PATH):
        write_csv(mock_dataset(**MOCK_DATA_CONFIG), MOCK_DATA_PATH)

    data_ingestion = DataIngestion(MOCK_DATA_PATH, VOTER_SCHEMA_PATH, RAW_DIR)
    data = data_ingestion.run()

    config = RunConfig(input=MOCK_DATA_PATH, schema=VOTER_SCHEMA_PATH).validate()
    plan = SanitizationPlan.build(config.L, config.allocation, config.m, config.epsilon, data.schema.p, config.seed)
    synthesizer = Synthesizer(data, plan, config.method, SYNTHETIC_DIR, config=config.to_dict())
    synthesizer.run()

    replicates = synthesizer.result.replicates
    model_evaluation = ModelEvaluation(data, replicates, SYNTHESIS_CONFIG["metrics"], output_dir=REPORTS_DIR)
    model_evaluation.run()
