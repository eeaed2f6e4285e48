from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class Run(Base):
    """ One pipeline run """
    __tablename__ = "run"

    id = Column(Integer, primary_key=True, autoincrement=True)
    runName = Column(String(200))
    createdOn = Column(DateTime, default=datetime.utcnow)
    configHash = Column(String(64), index=True)
    seed = Column(Integer)
    k = Column(Integer)
    nUsers = Column(Integer)
    nItems = Column(Integer)
    nTestUsers = Column(Integer)
    outputDir = Column(Text)
    status = Column(String(20))

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if k not in ["_sa_instance_state", "pairResults",
                                                                    "significances"]}

    def __repr__(self):
        return "<Run(%r, %r, %r, %r)>" % (self.id, self.runName, self.configHash, self.status)


class PairResult(Base):
    """ Test-partition means of one (model, variant) pair """
    __tablename__ = "pair_result"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("run.id"), index=True)
    model = Column(String(20), index=True)
    variant = Column(String(100), index=True)
    status = Column(String(20))
    nUsers = Column(Integer)
    hitrate = Column(Float)
    recall = Column(Float)
    ndcg = Column(Float)
    mrr = Column(Float)
    precision = Column(Float)
    pValueRandom = Column(Float)
    error = Column(Text)

    # relations
    run = relationship("Run", backref="pairResults")

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if k not in ["_sa_instance_state", "run"]}

    def __repr__(self):
        return "<PairResult(%r, %r, %r, %r, %r)>" % (
            self.run_id, self.model, self.variant, self.status, self.hitrate)


class Significance(Base):
    """ Paired bootstrap p-value between two variants of one model """
    __tablename__ = "significance"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("run.id"), index=True)
    model = Column(String(20))
    variantA = Column(String(100))
    variantB = Column(String(100))
    metric = Column(String(20))
    pValue = Column(Float)

    # relations
    run = relationship("Run", backref="significances")

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if k not in ["_sa_instance_state", "run"]}

    def __repr__(self):
        return "<Significance(%r, %r, %r vs %r: %r)>" % (
            self.run_id, self.model, self.variantA, self.variantB, self.pValue)
