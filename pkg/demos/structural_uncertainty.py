"""
Counting what you cannot enumerate, placing what you cannot see
===============================================================

Two kinds of structural uncertainty and how both backends treat them
identically:

* number uncertainty — a squad has up to four members, but how many exist
  is itself a random variable; the count attribute mixes the per-size
  answers with the declared size distribution.
* reference uncertainty — a scout is at a ridge or in a hollow; which one
  is a random selector, and every attribute read through the placement
  marginalizes over the hypotheses.
"""

import numpy as np

from spook import answer_query_kbmc, answer_query_structured, parse_kb, parse_query

squad_text = """
class Squad {
  simple morale { range low, high ; cpd { 0.35 0.65 ; } }
  complex has-member : Member multi(4) inverse in-squad ;
  number member-count over has-member { cpd { 0.1 0.15 0.3 0.25 0.2 ; } }
  quantifier actives = count(has-member.state == active) ;
}
class Member {
  complex in-squad : Squad inverse has-member ;
  simple state { range idle, active ; parents in-squad.morale ;
    cpd { 0.7 0.3 ; 0.2 0.8 ; } }
}
instance squad-1 : Squad { }
"""

kb = parse_kb(squad_text)
expr = parse_query("P(squad-1.actives)")
structured = answer_query_structured(kb, expr)
flat = answer_query_kbmc(kb, expr)

print("size-uncertain active count, squad-1:")
for value in structured.values:
    bar = "#" * round(40 * structured[value])
    print(f"  {value}  {structured[value]:.4f}  {bar}")
print(f"  backends differ by {np.max(np.abs(structured.probs - flat.probs)):.2e}")

scout_text = """
class Spot { simple cover { range thin, thick ; cpd { 0.5 0.5 ; } } }
class Ridge extends Spot { simple cover { range thin, thick ; cpd { 0.15 0.85 ; } } }
class Hollow extends Spot { simple cover { range thin, thick ; cpd { 0.9 0.1 ; } } }
class Scout {
  complex at : Spot ;
  reference believed-at over at { entries class Ridge, class Hollow ; cpd { 0.3 0.7 ; } }
  simple spotted { range no, yes ; parents at.cover ; cpd { 0.25 0.75 ; 0.8 0.2 ; } }
}
instance scout-1 : Scout { }
"""

kb = parse_kb(scout_text)
marginal = answer_query_structured(kb, parse_query("P(scout-1.spotted)"))
print("\nplacement-uncertain detection, scout-1:")
print(f"  P(spotted = yes) = {marginal['yes']:.4f}   (marginal over placements)")

# Conditioning on the placement shows what the marginal averages over, and
# observing the downstream effect flows back to the placement itself.
for hyp in ("Ridge", "Hollow"):
    clamped = answer_query_structured(
        kb, parse_query(f"P(scout-1.spotted | scout-1.believed-at = {hyp})")
    )
    print(f"  P(spotted = yes | at {hyp.lower()}) = {clamped['yes']:.4f}")

posterior = answer_query_structured(
    kb, parse_query("P(scout-1.believed-at | scout-1.spotted = yes)")
)
prior = answer_query_structured(kb, parse_query("P(scout-1.believed-at)"))
print(f"  being spotted moves P(ridge) {prior['Ridge']:.4f} -> "
      f"{posterior['Ridge']:.4f}")
