import datetime

import pytest
from hypothesis import settings

from hfpheno.corpus import Document, LabeledCase, Site

settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")


def make_document(doc_id="d1", text="tekst van de brief", patient="p1",
                  admission=datetime.date(2020, 1, 10),
                  discharge=datetime.date(2020, 1, 15), site=Site.A) -> Document:
    return Document(id=doc_id, patient_id=patient, admission_date=admission,
                    discharge_date=discharge, text=text, site=site)


@pytest.fixture
def document():
    return make_document()


@pytest.fixture
def case(document):
    return LabeledCase(document=document)
