"""Deterministic bundled fixtures: a synthetic CTI corpus, the SolarWinds
running-example documents, and the clean/poisoned reference graphs."""

from __future__ import annotations

import numpy as np

from ctikg.ckg import Ckg
from ctikg.corpus import Document
from ctikg.extraction import Triple

# The two reference queries used throughout the attack demos.
CAMPAIGN_CLICKBAIT_QUERY = (
    "SELECT ?x WHERE { ?x a CKG:Campaign; CKG:uses CKG:clicks_an_icon. }"
)
SOLARWINDS_ATTACK_PATTERN_QUERY = (
    "SELECT ?x WHERE { ?x a CKG:Attack-Pattern; ^CKG:uses CKG:Solarwinds-hack. }"
)
REFERENCE_QUERIES = [CAMPAIGN_CLICKBAIT_QUERY, SOLARWINDS_ATTACK_PATTERN_QUERY]

# Fake-CTI running example fed to the extraction pipeline in demos.
SOLARWINDS_FAKE_SENTENCE = (
    "Malicious domain in SolarWinds hack turned into killswitch service "
    "where the malicious user clicks an icon (i.e., a cross-domain link) "
    "to connect the service page to a specific target."
)

_ACTORS = ["APT41", "Lazarus Group", "Fancy Bear", "Sandworm"]
_MALWARE = ["Emotet", "TrickBot", "LockBit", "Sunburst backdoor"]
_TOOLS = ["Cobalt Strike", "Mimikatz", "PowerShell loader"]
_TECHNIQUES = [
    "spear phishing", "credential theft", "lateral movement",
    "social engineering", "SQL injection", "watering hole",
    "privilege escalation", "remote code execution",
]
_PRODUCTS = ["Exchange Server", "WordPress", "Win32k"]
_SECTORS = [
    "financial services", "healthcare providers", "government agencies",
    "energy utilities", "higher education", "defense contractors",
    "media companies", "retail chains",
]
_REGIONS = [
    "North America", "Western Europe", "Southeast Asia",
    "Eastern Europe", "South America",
]

_SENTENCE_TEMPLATES = [
    "The {actor} group deployed {malware} against {sector} across {region}.",
    "Analysts observed {technique} activity linked to {actor} throughout the quarter.",
    "Operators used {tool} to stage payloads after the initial {technique} wave.",
    "Incident responders recovered {malware} samples from compromised {sector}.",
    "The campaign relied on {technique} to gain an initial foothold in {sector}.",
    "Telemetry shows {actor} targeting {product} installations in {region}.",
    "Patches for the flaw in {product} were released after reports of {technique}.",
    "Researchers attribute the intrusion set to {actor} with moderate confidence.",
    "Detection rules for {tool} traffic were shared with affected {sector}.",
    "The {malware} loader fetched second stage modules over an encrypted channel.",
    "Victims reported {technique} attempts days before the {malware} outbreak.",
    "Security teams in {region} hardened {product} hosts against {technique}.",
]


def _sentence(rng: np.random.Generator) -> str:
    template = _SENTENCE_TEMPLATES[rng.integers(len(_SENTENCE_TEMPLATES))]
    return template.format(
        actor=_ACTORS[rng.integers(len(_ACTORS))],
        malware=_MALWARE[rng.integers(len(_MALWARE))],
        tool=_TOOLS[rng.integers(len(_TOOLS))],
        technique=_TECHNIQUES[rng.integers(len(_TECHNIQUES))],
        product=_PRODUCTS[rng.integers(len(_PRODUCTS))],
        sector=_SECTORS[rng.integers(len(_SECTORS))],
        region=_REGIONS[rng.integers(len(_REGIONS))],
    )


def build_fixture_corpus(n_docs: int = 200, seed: int = 7,
                         sentences_per_doc: tuple[int, int] = (30, 60)) -> list[Document]:
    """Template-generated true-CTI documents over the three source
    categories; fully determined by the seed."""
    rng = np.random.default_rng(seed)
    docs = []
    categories = ["news", "cve", "apt_report"]
    for i in range(n_docs):
        category = categories[i % len(categories)]
        n_sentences = int(rng.integers(sentences_per_doc[0], sentences_per_doc[1] + 1))
        body_sentences = [_sentence(rng) for _ in range(n_sentences)]
        if category == "cve":
            year = 2019 + int(rng.integers(2))
            number = 1000 + i
            product = _PRODUCTS[rng.integers(len(_PRODUCTS))]
            body_sentences.insert(
                0, f"CVE-{year}-{number:04d} describes a flaw in {product}.")
        body = " ".join(body_sentences)
        docs.append(Document(
            id=f"{category}-{i:04d}",
            source_category=category,
            title=body_sentences[0].rstrip("."),
            body=body,
            provenance=f"fixture://{category}/{i:04d}",
            authenticity="true_cti",
        ))
    return docs


def solarwinds_true_docs() -> list[Document]:
    """True-CTI documents whose extraction reproduces the clean reference graph."""
    return [
        Document(
            id="solarwinds-true-0001",
            source_category="news",
            title="SolarWinds hack traced to trojanized Orion Software",
            body=("The SolarWinds hack used malicious code delivered through the "
                  "Orion Software update channel."),
            provenance="fixture://news/solarwinds-0001",
            authenticity="true_cti",
        ),
        Document(
            id="solarwinds-true-0002",
            source_category="apt_report",
            title="Follow-up analysis of the SolarWinds hack",
            body=("Investigators found the SolarWinds hack exploited a simple "
                  "password on a build server while offloading sensitive tools "
                  "to staging hosts."),
            provenance="fixture://apt/solarwinds-0002",
            authenticity="true_cti",
        ),
    ]


def solarwinds_fake_doc() -> Document:
    return Document(
        id="solarwinds-fake-0001",
        source_category="news",
        title="Malicious Domain in SolarWinds Hack Turned into Killswitch Service",
        body=SOLARWINDS_FAKE_SENTENCE,
        provenance="generated:solarwinds-true-0001",
        authenticity="fake_cti",
    )


def clean_reference_graph() -> Ckg:
    """Graph state built from legitimate sources only."""
    prov1 = "solarwinds-true-0001"
    prov2 = "solarwinds-true-0002"
    return Ckg([
        Triple("solarwinds_hack", "a", "Campaign", prov1),
        Triple("orion_software", "a", "Tool", prov1),
        Triple("malicious_code", "a", "Attack-Pattern", prov1),
        Triple("solarwinds_hack", "uses", "orion_software", prov1, 0.9),
        Triple("solarwinds_hack", "uses", "malicious_code", prov1, 0.9),
        Triple("solarwinds_hack", "a", "Campaign", prov2),
        Triple("simple_password", "a", "Vulnerability", prov2),
        Triple("offloading_sensitive_tools", "a", "Attack-Pattern", prov2),
        Triple("solarwinds_hack", "exploits", "simple_password", prov2, 0.9),
        Triple("solarwinds_hack", "uses", "offloading_sensitive_tools", prov2, 0.9),
    ])


def poisoned_reference_graph() -> Ckg:
    """Clean graph plus the assertions extracted from the fake document."""
    prov = "solarwinds-fake-0001"
    graph = clean_reference_graph()
    graph.assert_triples([
        Triple("solarwinds_hack", "a", "Campaign", prov),
        Triple("clicks_an_icon", "a", "Attack-Pattern", prov),
        Triple("connect_the_service_page", "a", "Attack-Pattern", prov),
        Triple("solarwinds_hack", "uses", "clicks_an_icon", prov, 0.9),
        Triple("solarwinds_hack", "uses", "connect_the_service_page", prov, 0.9),
    ])
    return graph
