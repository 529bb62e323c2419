from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def tei(body: str, title: str = "T", abstract: str | None = None, bib: str = "") -> bytes:
    abs_xml = f"<profileDesc><abstract><p>{abstract}</p></abstract></profileDesc>" if abstract is not None else ""
    return (
        '<TEI xmlns="http://www.tei-c.org/ns/1.0"><teiHeader><fileDesc><titleStmt>'
        f"<title>{title}</title></titleStmt></fileDesc>{abs_xml}</teiHeader>"
        f"<text><body>{body}</body><back><div><listBibl>{bib}</listBibl></div></back></text></TEI>"
    ).encode()


def bibl(key: str, title: str) -> str:
    return f'<biblStruct xml:id="{key}"><analytic><title level="a">{title}</title></analytic></biblStruct>'


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
