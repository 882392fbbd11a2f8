import json
import os
from typing import Union

import numpy as np
import pandas as pd

from config.paths_config import *
from src.custom_exception import CustomException, DataIOError, SchemaError
from src.dataset import Attribute, CategoricalDataset, Schema
from src.logger import get_logger

logger = get_logger(__name__)

INFER = "infer"


def load_schema(path: str) -> Schema:
    try:
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError as e:
        raise DataIOError(f"schema file not found: {path}", e)
    except json.JSONDecodeError as e:
        raise SchemaError(f"schema file is not valid JSON: {path}", e)
    return Schema.from_dict(payload)


def save_schema(schema: Schema, path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(schema.to_dict(), f, indent=2)


def _read_frame(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DataIOError(f"input file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, encoding="utf-8", keep_default_na=False, na_filter=False,
                         skipinitialspace=False, on_bad_lines="error")
    except pd.errors.EmptyDataError as e:
        raise DataIOError(f"empty file: {path}", e)
    except pd.errors.ParserError as e:
        raise SchemaError(f"ragged rows in {path}", e)
    except (OSError, UnicodeDecodeError) as e:
        raise DataIOError(f"cannot read {path}", e)

    if df.empty:
        raise DataIOError(f"empty file: {path} has a header but no records")
    # short rows come back as NaN even with na_filter off
    missing = df.isna() | (df == "")
    if missing.values.any():
        row = int(np.flatnonzero(missing.values.any(axis=1))[0])
        raise SchemaError(f"ragged row or missing value at data row {row + 1} of {path}")
    return df


def infer_schema(df: pd.DataFrame) -> Schema:
    return Schema(tuple(Attribute(str(col), tuple(sorted(df[col].unique()))) for col in df.columns))


def load_csv(path: str, schema: Union[Schema, str] = INFER) -> CategoricalDataset:
    df = _read_frame(path)

    if isinstance(schema, str):
        if schema != INFER:
            raise SchemaError(f"schema must be a Schema or '{INFER}', got '{schema}'")
        schema = infer_schema(df)
    else:
        if sorted(df.columns) != sorted(schema.names):
            raise SchemaError(f"header {list(df.columns)} does not match schema attributes {list(schema.names)}")
        df = df[list(schema.names)]

    records = np.empty((len(df), schema.p), dtype=np.int64)
    for j, attr in enumerate(schema.attributes):
        codes = pd.Categorical(df[attr.name], categories=list(attr.levels)).codes
        if (codes < 0).any():
            bad = df[attr.name][codes < 0].iloc[0]
            raise SchemaError(f"unknown level '{bad}' for attribute '{attr.name}'")
        records[:, j] = codes

    logger.info(f"Loaded {len(df)} records over {schema.p} attributes from {path}")
    return CategoricalDataset(schema, records)


def write_csv(data: CategoricalDataset, path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    try:
        data.to_frame().to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise DataIOError(f"cannot write {path}", e)


class DataIngestion:
    def __init__(self, input_path, schema_path=None, output_dir=RAW_DIR):
        self.input_path = input_path
        self.schema_path = schema_path
        self.output_dir = output_dir
        self.schema = None

        os.makedirs(self.output_dir, exist_ok=True)

    def load_schema(self):
        if self.schema_path is None:
            logger.info("No schema given, levels will be inferred from the data")
            return INFER
        self.schema = load_schema(self.schema_path)
        logger.info(f"Schema loaded with {self.schema.p} attributes and {self.schema.n_cells} cells")
        return self.schema

    def extract_data(self):
        data = load_csv(self.input_path, self.load_schema())
        self.schema = data.schema
        return data

    def save_schema(self):
        path = os.path.join(self.output_dir, "schema.json")
        save_schema(self.schema, path)
        logger.info(f"Resolved schema saved to {path}")

    def run(self):
        try:
            logger.info("Data Ingestion started .........")
            data = self.extract_data()
            self.save_schema()
            logger.info("End of data ingestion...")
            return data

        except CustomException as e:
            logger.error(f"error while data ingestion {e.message}")
            raise
        except Exception as e:
            logger.error(f"error while data ingestion {e}")
            raise CustomException(str(e), e)
