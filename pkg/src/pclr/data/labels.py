"""Keyword labelers for atrial fibrillation and left ventricular hypertrophy."""

AF_KEYWORDS = frozenset({
    "atrial fibrillation with rapid ventricular response",
    "atrial fibrillation with moderate ventricular response",
    "fibrillation/flutter",
    "atrial fibrillation with controlled ventricular response",
    "afib",
    "atrial fib",
    "afibrillation",
    "atrial fibrillation",
    "atrialfibrillation",
})

LVH_KEYWORDS = frozenset({
    "biventricular hypertrophy",
    "leftventricular hypertrophy",
    "combined ventricular hypertrophy",
    "left ventricular hypertr",
    "biventriclar hypertrophy",
})


def _contains_any(text: str | None, keywords) -> bool:
    if not text:
        return False
    lowered = text.lower()
    return any(k in lowered for k in keywords)


def label_af(diagnosis_text: str | None) -> bool:
    return _contains_any(diagnosis_text, AF_KEYWORDS)


def label_lvh(diagnosis_text: str | None) -> bool:
    return _contains_any(diagnosis_text, LVH_KEYWORDS)
