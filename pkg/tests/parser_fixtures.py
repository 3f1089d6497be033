"""Hand-derived response-parsing fixtures shared by unit and acceptance tests.

Each fixture is (name, response_text, expected_food_terms, expected_status).
Expected values were worked out by hand from the parsing rules before the
parser was run on them; they are frozen — do not regenerate from the parser.
"""

from hazardex.response_parser import RECOVERED, UNPARSEABLE, WELL_FORMED

FIXTURES = [
    # --- well-formed -----------------------------------------------------
    (
        "three_foods",
        "{'Chinese cabbage': ['cadmium', 'chromium'], 'wheat': ['deoxynivalenol',"
        " 'arsenic'], 'shellfish': ['saxitoxin']}",
        {
            "Chinese cabbage": ["cadmium", "chromium"],
            "wheat": ["deoxynivalenol", "arsenic"],
            "shellfish": ["saxitoxin"],
        },
        WELL_FORMED,
    ),
    ("empty_mapping", "{}", {}, WELL_FORMED),
    ("single_pair", "{'milk': ['aflatoxin M1']}", {"milk": ["aflatoxin M1"]}, WELL_FORMED),
    (
        "double_quotes",
        '{"fish": ["methylmercury", "dioxins"]}',
        {"fish": ["methylmercury", "dioxins"]},
        WELL_FORMED,
    ),
    (
        "prose_before",
        "Sure, here is the mapping: {'dairy': ['penicillin']}",
        {"dairy": ["penicillin"]},
        WELL_FORMED,
    ),
    (
        "prose_after",
        "{'dairy': ['penicillin']} I hope this helps!",
        {"dairy": ["penicillin"]},
        WELL_FORMED,
    ),
    (
        "bare_words",
        "{milk: [lead, cadmium]}",
        {"milk": ["lead", "cadmium"]},
        WELL_FORMED,
    ),
    ("trailing_comma", "{'milk': ['Pb'],}", {"milk": ["Pb"]}, WELL_FORMED),
    (
        "scaffold_lines",
        "Chemicals: [cadmium]\nFoods: [rice]\nDictionary: {'rice': ['cadmium']}",
        {"rice": ["cadmium"]},
        WELL_FORMED,
    ),
    (
        "scaffold_with_epilogue",
        "Chemicals: [aflatoxin M1]\nFoods: [dairy milk]\n"
        "Dictionary: {'dairy milk': ['aflatoxin M1']}\nDone.",
        {"dairy milk": ["aflatoxin M1"]},
        WELL_FORMED,
    ),
    (
        "multiline",
        "{\n  'corn': [\n    'fumonisin B1',\n    'ochratoxin A'\n  ]\n}",
        {"corn": ["fumonisin B1", "ochratoxin A"]},
        WELL_FORMED,
    ),
    (
        "last_mapping_wins",
        "First draft: {'x': ['a']}\nFinal: {'shellfish': ['saxitoxin']}",
        {"shellfish": ["saxitoxin"]},
        WELL_FORMED,
    ),
    (
        "apostrophes_outside",
        "It's here: {'dairy': ['lead']} don't you think?",
        {"dairy": ["lead"]},
        WELL_FORMED,
    ),
    (
        "parens_in_value",
        "{'dairy milk': ['lead (Pb)']}",
        {"dairy milk": ["lead (Pb)"]},
        WELL_FORMED,
    ),
    ("empty_list_value", "{'salmon': []}", {"salmon": []}, WELL_FORMED),
    (
        "escaped_quote",
        "{'milk': ['3\\'-azido compound']}",
        {"milk": ["3'-azido compound"]},
        WELL_FORMED,
    ),
    (
        "unicode_surfaces",
        "{'maïs': ['aflatoxine B1']}",
        {"maïs": ["aflatoxine B1"]},
        WELL_FORMED,
    ),
    (
        "case_dedup_within_list",
        "{'milk': ['Pb', 'pb', 'PB']}",
        {"milk": ["Pb"]},
        WELL_FORMED,
    ),
    (
        "broken_final_falls_back",
        "{'milk': ['Pb']} {'broken': [}",
        {"milk": ["Pb"]},
        WELL_FORMED,
    ),
    # --- recovered --------------------------------------------------------
    (
        "bare_string_value",
        "{'shellfish': 'saxitoxin'}",
        {"shellfish": ["saxitoxin"]},
        RECOVERED,
    ),
    (
        "nested_one_level",
        "{'shellfish': {'toxins': ['saxitoxin']}}",
        {"shellfish": ["saxitoxin"]},
        RECOVERED,
    ),
    (
        "nested_multi_leaf",
        "{'milk': {'heavy metals': ['Pb', 'Cd'], 'mycotoxins': ['aflatoxin M1']}}",
        {"milk": ["Pb", "Cd", "aflatoxin M1"]},
        RECOVERED,
    ),
    ("empty_key_dropped", "{'': ['x'], 'milk': ['Pb']}", {"milk": ["Pb"]}, RECOVERED),
    (
        "duplicate_keys_merge",
        "{'milk': ['Pb'], 'milk': ['Cd']}",
        {"milk": ["Pb", "Cd"]},
        RECOVERED,
    ),
    (
        "duplicate_keys_case_dedup",
        "{'milk': ['Pb'], 'milk': ['pb']}",
        {"milk": ["Pb"]},
        RECOVERED,
    ),
    ("empty_item_dropped", "{'milk': ['Pb', '', 'Cd']}", {"milk": ["Pb", "Cd"]}, RECOVERED),
    ("blank_item_dropped", "{'milk': ['  ', 'Pb']}", {"milk": ["Pb"]}, RECOVERED),
    ("bare_word_value", "{milk: lead}", {"milk": ["lead"]}, RECOVERED),
    (
        "nested_bare_leaf",
        "{'milk': {'toxin': 'aflatoxin'}}",
        {"milk": ["aflatoxin"]},
        RECOVERED,
    ),
    (
        "mixed_bare_and_list",
        "{'milk': 'Pb', 'cheese': ['Cd']}",
        {"milk": ["Pb"], "cheese": ["Cd"]},
        RECOVERED,
    ),
    # --- unparseable --------------------------------------------------------
    ("empty_text", "", {}, UNPARSEABLE),
    ("prose_only", "I could not find any hazards.", {}, UNPARSEABLE),
    ("unbalanced_brace", "{'milk': ['Pb'", {}, UNPARSEABLE),
    ("missing_colon", "{'milk' ['Pb']}", {}, UNPARSEABLE),
    ("missing_comma", "{'milk': ['Pb'] 'fish': ['Hg']}", {}, UNPARSEABLE),
    ("list_only", "[saxitoxin, cadmium]", {}, UNPARSEABLE),
    ("nested_two_levels", "{'milk': {'a': {'b': ['x']}}}", {}, UNPARSEABLE),
    ("prose_in_braces", "Use {curly braces} wisely.", {}, UNPARSEABLE),
    ("leading_colon", "{: ['Pb']}", {}, UNPARSEABLE),
    (
        "scaffold_without_dict",
        "Chemicals: [cadmium]\nFoods: [milk]",
        {},
        UNPARSEABLE,
    ),
]

assert len(FIXTURES) >= 30
assert len({name for name, *_ in FIXTURES}) == len(FIXTURES)
