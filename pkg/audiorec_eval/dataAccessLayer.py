import logging

import numpy as np
import pandas as pd
from sqlalchemy import create_engine
from sqlalchemy.exc import ProgrammingError
from sqlalchemy.inspection import inspect
from sqlalchemy.orm import sessionmaker

from .records import Base, PairResult, Run, Significance

logger = logging.getLogger(__name__)


class DataAccessLayer:
    """Class managing access to the results database"""

    def __init__(self, url=None, echo=False, connect=True, base=None):
        """Constructor for data access class.
        Default is an in-memory SQLite database
        :param url: <string> SQLAlchemy database url, e.g. "sqlite:///runs/latest/results.sqlite"
        :param echo: <string, boolean> whether to echo sql statements, "debug" for verbose output
        :param connect: <boolean> True to establish immediate connection to database
                        default: True
        :param base: <sqlalchemy declarative base> Base class of ORM
        """
        self.engine = None
        self.conn_string = url or "sqlite://"
        self.echo = echo
        if base is None:
            self.Base = Base
        else:
            self.Base = base
        if connect:
            self.connect()

    def connect(self):
        """ Connects to database and creates missing tables """
        if self.engine is None:
            self.engine = create_engine(self.conn_string, echo=self.echo)
            self.Base.metadata.create_all(self.engine)
            self.Session = sessionmaker(bind=self.engine)
            self.session = self.Session()

    def close(self):
        if self.engine is not None:
            self.session.close()
            self.engine.dispose()
            self.engine = None

    def insert_df(self, df, obj, update=False, verbose=False):
        """Inserts dataframe to database using session and ORM object.
        Dataframe has to have columns matching fields of the ORM object. Rows without
        primary key values are always inserted (autoincrement).
        :param df: <pd.DataFrame> with data
        :param obj: <ORM object>
        :param update: <boolean> True to replace existing rows with the same key
        :param verbose: <boolean> to log all keys not inserted
        :return: <int> number of inserted rows
        """
        pk_names = [i.name for i in inspect(obj).primary_key]
        df_ = self._replace_null(df)
        n_skipped = 0
        to_add = []
        for record in df_.to_dict(orient="records"):
            # sqlite cannot bind numpy scalars
            item = {k: v.item() if isinstance(v, np.generic) else v for k, v in record.items()}
            pk = {k: v for k, v in item.items() if k in pk_names and v is not None}
            if len(pk) == len(pk_names):
                try:
                    qry = self.session.query(obj).filter_by(**pk)
                    exists = qry.count() > 0
                except ProgrammingError:
                    exists = False
                if exists:
                    if update:
                        qry.delete()
                    else:
                        n_skipped += 1
                        if verbose:
                            logger.info("did not insert %s", pk)
                        continue
            to_add.append(obj(**item))
        self.session.add_all(to_add)
        self.session.commit()
        if n_skipped:
            logger.warning("%d %s rows not inserted due to key duplication", n_skipped, obj.__tablename__)
        return len(to_add)

    @staticmethod
    def _replace_null(df):
        """replaces nan and nat in dataframe by None values for database insertion"""
        df_ = df.astype("object")
        return df_.where(df.notnull(), None)

    def add_run(self, **fields):
        """Registers a run and returns the ORM object (with its id)"""
        run = Run(**fields)
        self.session.add(run)
        self.session.commit()
        return run

    def set_run_status(self, run_id, status):
        self.session.query(Run).filter_by(id=run_id).update({"status": status})
        self.session.commit()

    def frame(self, obj, **filters):
        """Rows of an ORM table as dataframe, optionally filtered by column values"""
        rows = [r.to_dict() for r in self.session.query(obj).filter_by(**filters).order_by(obj.id)]
        columns = [c.name for c in obj.__table__.columns]
        return pd.DataFrame(rows, columns=columns)

    def results(self, run_id=None):
        """Pair results joined with their run's name and config hash"""
        pairs = self.frame(PairResult) if run_id is None else self.frame(PairResult, run_id=run_id)
        runs = self.frame(Run)[["id", "runName", "configHash"]].rename(columns={"id": "run_id"})
        return pairs.merge(runs, on="run_id", how="left")

    def significances(self, run_id):
        return self.frame(Significance, run_id=run_id)
