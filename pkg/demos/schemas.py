"""
The two built-in metadata schemas
=================================

A schema is an ordered list of fields. Each field has a group, a definition
that goes into the extraction prompt, and a match mode that decides how it
is scored later.
"""

from metaharvest import builtin_schema

lter = builtin_schema("lter-life")
croissant = builtin_schema("croissant")

# LTER-LIFE: 21 fields in 7 groups
for group in lter.groups:
    names = [f.name for f in lter.fields if f.group == group]
    print(f"{group:26s} {', '.join(names)}")

# Croissant is smaller and adds three distribution dates/links
print()
print("croissant:", ", ".join(croissant.names))

# the overlap between the two
shared = [n for n in lter.names if n in croissant]
print()
print(f"{len(shared)} shared fields:", ", ".join(shared))

# only free-text fields are scored with the LLM judge
print("fuzzy fields:", [f.name for f in lter.fields if f.fuzzy])

# a definition, as the model will see it
print()
print(lter.field("Temporal coverage").definition)
