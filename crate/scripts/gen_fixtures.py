#!/usr/bin/env python3
"""Regenerates the taxonomy fixtures and the synthetic benchmark set.

Deterministic: running it twice produces identical files.
"""
import json
import os
import random

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "fixtures")


def dump(path, obj):
    with open(os.path.join(ROOT, path), "w") as f:
        json.dump(obj, f, indent=2, ensure_ascii=False)
        f.write("\n")


def attr(name, values):
    return {"name": name, "values": [{"value": v, "description": d} for v, d in values]}


PERIOD = [
    ("stated", "the retention period is stated explicitly"),
    ("limited", "data is kept only for a limited time"),
    ("indefinite", "data kept with no deletion commitment"),
    ("unspecified", "the policy does not say how long data is kept"),
]
PURPOSE = [
    ("advertising", "retained to serve or measure advertising"),
    ("analytics", "retained for analytics or research"),
    ("legal", "retained to meet legal requirements"),
    ("service-operation", "retained to operate the service"),
    ("unspecified", "the purpose of retention is not given"),
]
TYPE = [
    ("location", "geo-location data"),
    ("contact", "contact data such as email address or phone number"),
    ("financial", "payment or financial data"),
]

data_retention = {"name": "data-retention", "attributes": [attr("period", PERIOD), attr("purpose", PURPOSE), attr("type", TYPE)]}
dump("taxonomy/data-retention.json", {"categories": [data_retention]})

dump("taxonomy/opp-mini.json", {"categories": [
    data_retention,
    {"name": "user-access", "attributes": [
        attr("access-type", [
            ("edit", "users can edit or correct their information"),
            ("deactivate", "users can deactivate their account"),
            ("delete", "users can delete their account or data"),
            ("view", "users can view the data held about them"),
            ("export", "users can export a copy of their data"),
        ]),
        attr("user-type", [
            ("user-with-account", "applies to users who have an account"),
            ("user-without-account", "applies to users without an account"),
        ]),
    ]},
    {"name": "policy-change", "attributes": [
        attr("change-type", [
            ("privacy-relevant", "changes that affect how personal data is handled"),
            ("non-privacy-relevant", "changes unrelated to personal data"),
            ("unspecified", "the kind of change is not described"),
        ]),
        attr("notification", [
            ("general-notice", "changes are announced on the website or in the policy"),
            ("personal-notice", "users are notified individually, for example by email"),
            ("no-notice", "changes may take effect without notice"),
        ]),
    ]},
    {"name": "contact-details", "attributes": [
        attr("contact-information", [
            ("present", "contact details of the data controller are given"),
            ("absent", "no contact details of the data controller are given"),
        ]),
    ]},
]})

words = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet"]
dump("taxonomy/toy-1000.json", {"categories": [{"name": "data-retention", "attributes": [
    attr(a, [(f"{a[:3]}-{w}", f"{a} value {w}") for w in words]) for a in ["period", "purpose", "type"]
]}]})

# Synthetic benchmark set.
CASES = [
    ("deletes-on-closure", "The service deletes personal data when the user closes the account."),
    ("keeps-after-closure", "The service keeps personal data after the account is closed."),
    ("sells-data", "The service sells personal data to third parties."),
    ("does-not-sell", "The service does not sell personal data."),
    ("personal-notice", "Users are notified personally before material policy changes."),
    ("no-notice", "The policy may change without any notice to users."),
    ("export-allowed", "Users can export a copy of their data."),
    ("export-denied", "Users cannot obtain a copy of their data."),
    ("location-consent", "Location data is collected only with the user's consent."),
    ("location-no-consent", "Location data is collected without asking for consent."),
    ("ad-cookies", "Tracking cookies are used for advertising."),
    ("no-tracking-cookies", "No tracking cookies are used."),
    ("privacy-contact", "The service provides a contact address for privacy questions."),
    ("eu-storage", "Personal data is stored on servers located in the European Union."),
]
PAIRS = [(CASES[i][0], CASES[i + 1][0]) for i in range(0, 12, 2)]
SUPPORT = {
    "deletes-on-closure": "When you close your account we delete your personal information within thirty days.",
    "keeps-after-closure": "We may retain your personal information even after you close your account.",
    "sells-data": "We sell certain personal information to our marketing partners.",
    "does-not-sell": "We do not sell your personal information to anyone.",
    "personal-notice": "Before any material change to this policy takes effect we will email you directly.",
    "no-notice": "We may modify this policy at any time without notifying you.",
    "export-allowed": "You can download a copy of your data from the settings page at any time.",
    "export-denied": "We are unable to provide copies of the data we hold about you.",
    "location-consent": "We collect precise location only after you grant permission on your device.",
    "location-no-consent": "We collect your location automatically whenever you use the app.",
    "ad-cookies": "Our advertising partners place tracking cookies to show you relevant ads.",
    "no-tracking-cookies": "We use only strictly necessary cookies and never tracking cookies.",
    "privacy-contact": "Questions about privacy can be sent to our data protection officer by email.",
    "eu-storage": "All personal data is hosted in data centres within the European Union.",
}
FILLER = [
    "This policy explains how we handle information in connection with our services.",
    "We use information to provide, maintain and improve the features you use.",
    "Some features may be offered by affiliated companies under their own terms.",
    "You should read this policy together with our terms of service.",
    "Information may be processed in the course of routine maintenance.",
    "We apply technical and organisational measures appropriate to the risk.",
    "Our services are not directed at children under the age of thirteen.",
    "Where required we rely on legitimate interests to process information.",
    "Service providers act on our instructions and under confidentiality obligations.",
    "Aggregated statistics that do not identify you may be shared publicly.",
    "We review our practices periodically to keep them current.",
    "Certain information is necessary to create and secure an account.",
]

rng = random.Random(2024)
annotations = []
policies_dir = os.path.join(ROOT, "bench", "policies")
for n in range(22):
    pid = f"service-{n:02d}"
    claims = []
    for a, b in PAIRS:
        r = rng.random()
        if r < 0.45:
            claims.append(a)
        elif r < 0.85:
            claims.append(b)
    for extra in ("privacy-contact", "eu-storage"):
        if rng.random() < 0.5:
            claims.append(extra)
    sentences = []
    for _ in range(rng.randint(45, 90)):
        sentences.append(rng.choice(FILLER))
    for c in claims:
        sentences.insert(rng.randrange(len(sentences) + 1), SUPPORT[c])
    with open(os.path.join(policies_dir, f"{pid}.txt"), "w") as f:
        paragraphs = [" ".join(sentences[i:i + 5]) for i in range(0, len(sentences), 5)]
        f.write("\n\n".join(paragraphs) + "\n")
    for c in claims:
        annotations.append({"policy_id": pid, "case_id": c, "excerpt": SUPPORT[c]})

dump("bench/cases.json", [{"case_id": c, "statement": s} for c, s in CASES])
dump("bench/pairs.json", [{"case_id_a": a, "case_id_b": b} for a, b in PAIRS])
dump("bench/annotations.json", annotations)
