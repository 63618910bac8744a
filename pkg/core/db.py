from peewee import (
    CharField,
    DateTimeField,
    IntegerField,
    UUIDField,
    SqliteDatabase,
    Model,
    TextField,
)
from playhouse.shortcuts import model_to_dict

import datetime
import os
import uuid
import json

# Bound per output directory by init_db(); every run folder carries its own runs.db.
db = SqliteDatabase(None)

DB_NAME = "runs.db"

STATUS_STARTED = "started"
STATUS_COMPLETED = "completed"
STATUS_FAILED = "failed"


class JSONField(TextField):
    def db_value(self, value):
        return json.dumps(value) if value is not None else None

    def python_value(self, value):
        return json.loads(value) if value is not None else None


class BaseModel(Model):
    class Meta:
        database = db


class Run(BaseModel):
    run_id = UUIDField(primary_key=True, default=uuid.uuid4)
    experiment = CharField()
    stem = CharField()
    config = JSONField(null=True)
    status = CharField(default=STATUS_STARTED)
    failures = IntegerField(default=0)
    solves = IntegerField(default=0)
    message = TextField(null=True)
    created_at = DateTimeField(default=datetime.datetime.now)
    updated_at = DateTimeField(default=datetime.datetime.now)

    def save(self, *args, **kwargs):
        self.updated_at = datetime.datetime.now()
        return super().save(*args, **kwargs)


def init_db(out_dir):
    """Open (and create if needed) the run ledger of an output directory."""
    path = os.path.join(out_dir, DB_NAME)
    if not db.is_closed():
        db.close()
    db.init(path)
    db.connect()
    db.create_tables([Run])
    return path


def close_db():
    if not db.is_closed():
        db.close()


def create_run(experiment, stem, config):
    return Run.create(experiment=experiment, stem=stem, config=config)


def finish_run(run_id, status, failures=0, solves=0, message=None):
    run = Run.get(Run.run_id == run_id)
    run.status = status
    run.failures = failures
    run.solves = solves
    run.message = message
    run.save()
    return run


def _serialize_value(value):
    """Convert Peewee/complex objects into JSON-safe types."""
    if isinstance(value, uuid.UUID):
        return str(value)
    if isinstance(value, (datetime.datetime, datetime.date)):
        return value.isoformat()
    return value


def _serialize_row(row: dict) -> dict:
    """Apply serialization to every field in a row dict."""
    return {k: _serialize_value(v) for k, v in row.items()}


def get_all_runs():
    query = Run.select().order_by(Run.created_at)
    return [_serialize_row(model_to_dict(r)) for r in query]
