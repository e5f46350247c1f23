"""
Interpreting a stream of battlefield evidence
=============================================

The bundled battalion model relates an artillery battery's chance of being
hit to the fire its battalion is drawing and to the damage its guns report.
Watching P(hit) move as observations accumulate shows explaining-away at
work: silence from the guns is reassuring only until good concealment
offers another reason for the silence.
"""

from importlib.resources import files

from spook import StructuredEngine, answer_query_kbmc, parse_kb, parse_query

source = files("spook").joinpath("fixtures/battalion.spook").read_text()
kb = parse_kb(source)

# One engine for the whole dialogue: the subquery cache carries across
# queries, so later questions are cheaper than the first.
engine = StructuredEngine(kb)

steps = [
    ("prior", "P(battery-a.hit)"),
    ("battalion under heavy fire",
     "P(battery-a.hit | battalion-charlie.under-fire = heavy)"),
    ("...but no gun reports damage",
     "P(battery-a.hit | battalion-charlie.under-fire = heavy, "
     "battery-a.reported-damage = 0)"),
    ("...and the battery is well hidden",
     "P(battery-a.hit | battalion-charlie.under-fire = heavy, "
     "battery-a.reported-damage = 0, battery-a.hiding-support = good)"),
]

print(f"{'observation':<38} {'P(hit)':>8}   flat backend")
for label, query in steps:
    expr = parse_query(query)
    ans = engine.solve_top_level(expr)
    flat = answer_query_kbmc(kb, expr)
    print(f"{label:<38} {ans['yes']:>8.4f}   {flat['yes']:>8.4f}")

hits, misses, entries = engine.cache_stats()
print(f"\nsubquery cache after 4 queries: {hits} hits, "
      f"{misses} misses, {entries} entries")
