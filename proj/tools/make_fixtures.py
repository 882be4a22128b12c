#!/usr/bin/env python3
"""Regenerates the bundled fixtures under data/.

    python3 tools/make_fixtures.py [--out data]

Output is deterministic for a given script version.
"""

import argparse
import json
import random
from pathlib import Path

HAZARDS = [
    ("extreme_cold", "Extreme cold events",
     "Extreme cold events are periods of unusually low air temperature, cold waves and hard freezes that stress people, crops and infrastructure."),
    ("extreme_heat", "Extreme heat events",
     "Extreme heat events are heat waves with daily maximum temperatures well above local norms that persist for several days."),
    ("drought", "Droughts",
     "Droughts are prolonged periods of deficient precipitation causing water shortage, low streamflow, dry soil and reduced reservoir storage."),
    ("extreme_rainfall", "Extreme rainfall",
     "Extreme rainfall is heavy precipitation of high intensity over short duration producing flash flooding and runoff."),
    ("snow_ice_storms", "Extreme snow and ice storms",
     "Extreme snow and ice storms bring heavy snowfall, freezing rain and ice accretion on lines, roads and trees."),
    ("tropical_cyclones", "Tropical cyclones and hurricanes",
     "Tropical cyclones and hurricanes are rotating ocean storms with damaging winds, storm surge and torrential rain."),
    ("extratropical_cyclones", "Extratropical cyclones",
     "Extratropical cyclones are mid-latitude low pressure systems bringing strong winds, coastal surge and widespread precipitation."),
    ("wildfires", "Wildfires",
     "Wildfires are uncontrolled fires burning vegetation in forests and grasslands, driven by fuel dryness, heat and wind."),
    ("severe_convective_storms", "Severe convective storms",
     "Severe convective storms are thunderstorms producing tornadoes, large hail, lightning and damaging straight-line winds."),
    ("rising_surface_temperatures", "Rising surface temperatures",
     "Rising surface temperatures describe the long-term warming trend of near-surface air temperature over land."),
    ("permafrost_thaw", "Permafrost thaw",
     "Permafrost thaw is the warming and melting of perennially frozen ground, causing subsidence and carbon release."),
    ("snow_cover", "Snow cover snow pack",
     "Snow cover and snow pack changes affect seasonal snow water storage, melt timing and spring runoff."),
    ("sea_ice_glaciers", "Loss of arctic sea ice and glaciers",
     "Loss of arctic sea ice and glaciers is the decline in sea ice extent and glacier mass under warming."),
    ("drying_trend", "Drying trend",
     "A drying trend is a long-term decrease in soil moisture and water availability from reduced precipitation and higher evaporation."),
    ("sea_level_rise", "Sea-level rise",
     "Sea-level rise is the increase in mean ocean level from thermal expansion and ice melt, causing coastal inundation and erosion."),
    ("ocean_acidification", "Ocean acidification",
     "Ocean acidification is the decrease in seawater pH from absorbed atmospheric carbon dioxide, harming shells and corals."),
    ("co2_fertilization", "Carbon dioxide fertilization",
     "Carbon dioxide fertilization is enhanced plant photosynthesis and growth under elevated atmospheric carbon dioxide."),
    ("rising_sea_surface_temperatures", "Rising sea surface temperatures",
     "Rising sea surface temperatures are the warming of the upper ocean, affecting marine ecosystems and storm intensity."),
]

NCFS = {
    "connect": [
        "Operate Core Network", "Provide Cable Access Network Services",
        "Provide Internet Based Content, Information, and Communication Services",
        "Provide Internet Routing, Access, and Connection Services",
        "Provide Positioning, Navigation, and Timing Services", "Provide Radio Broadcast Access Network Services",
        "Provide Satellite Access Network Services", "Provide Wireless Access Network Services",
        "Provide Wireline Access Network Services",
    ],
    "distribute": [
        "Distribute Electricity", "Maintain Supply Chains", "Transmit Electricity",
        "Transport Cargo and Passengers by Air", "Transport Cargo and Passengers by Rail",
        "Transport Cargo and Passengers by Road", "Transport Cargo and Passengers by Vessel",
        "Transport Materials by Pipeline", "Transport Passengers by Mass Transit",
    ],
    "manage": [
        "Conduct Elections", "Develop and Maintain Public Works and Services", "Educate and Train", "Enforce Law",
        "Maintain Access to Medical Records", "Manage Hazardous Materials", "Manage Wastewater", "Operate Government",
        "Perform Cyber Incident Management Capabilities", "Prepare for and Manage Emergencies",
        "Preserve Constitutional Rights", "Protect Sensitive Information", "Provide and Maintain Infrastructure",
        "Provide Capital Markets and Investment Activities", "Provide Consumer and Commercial Banking Services",
        "Provide Funding and Liquidity Services",
        "Provide Identity Management and Associated Trust Support Services", "Provide Insurance Services",
        "Provide Medical Care", "Provide Payment, Clearing, and Settlement Services", "Provide Public Safety",
        "Provide Wholesale Funding", "Store Fuel and Maintain Reserves", "Support Community Health",
    ],
    "supply": [
        "Exploration and Extraction of Fuels", "Fuel Refining and Processing Fuels", "Generate Electricity",
        "Manufacture Equipment", "Produce and Provide Agricultural Products and Services",
        "Produce and Provide Human and Animal Food Products and Services", "Produce Chemicals",
        "Provide Metals and Materials", "Provide Housing", "Provide Information Technology Products and Services",
        "Provide Materiel and Operational Support to Defense", "Research and Development", "Supply Water",
    ],
}


def slug(name):
    out = "".join(c.lower() if c.isalnum() else "_" for c in name)
    while "__" in out:
        out = out.replace("__", "_")
    return out.strip("_")


def write_json(path, value):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(value, indent=2, ensure_ascii=False) + "\n")


def write_jsonl(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def full_categories(out):
    hazards = [{"id": cid, "name": name, "taxonomy": "hazard", "definition": text} for cid, name, text in HAZARDS]
    ncfs = []
    for group, names in NCFS.items():
        for name in names:
            ncfs.append({
                "id": slug(name),
                "name": name,
                "taxonomy": "ncf",
                "group": group,
                "definition": f"Critical function to {name.lower()}.",
            })
    assert len(hazards) == 18 and len(ncfs) == 55
    write_json(out / "categories" / "hazards.json", hazards)
    write_json(out / "categories" / "ncfs.json", ncfs)


# Mini corpus: each category owns a vocabulary; its definition is built from
# that vocabulary so hashed-bag cosine tracks topical overlap.
MINI_HAZARDS = {
    "drought": "drought precipitation deficit streamflow reservoir shortage dry soil aridity rainfall deficiency "
               "water scarcity irrigation demand",
    "extreme_rainfall": "extreme rainfall heavy precipitation intensity flash flooding runoff downpour storm "
                        "inundation cloudburst deluge",
    "wildfire": "wildfire fire burning vegetation forest fuel dryness flames smoke ignition burned area",
    "sea_level_rise": "sea level rise coastal inundation erosion shoreline tide surge ocean thermal expansion "
                      "flooding",
    "drying_trend": "drying trend soil moisture decline evaporation aridification long term decrease water "
                    "availability desiccation",
}
MINI_NCFS = {
    "supply_water": "supply drinking water treatment utility potable distribution pipes aquifer groundwater "
                    "municipal",
    "generate_electricity": "generate electricity power plant generation turbine hydropower thermal grid output "
                            "capacity",
    "manage_wastewater": "manage wastewater sewage treatment effluent sewer overflow sludge discharge sanitation",
    "transport_road": "transport road highway pavement traffic vehicles freight bridges culverts",
    "medical_care": "medical care hospital patients clinicians emergency department health services admissions",
    "agriculture": "agricultural crop yield farming livestock harvest farmers irrigation cultivation",
}
FILLER = ("study analysis results model data approach method framework evaluate observed estimate region regional "
          "assessment impact impacts scenario scenarios future projected trends variability sensitivity evidence "
          "case findings spatial temporal network system systems planning risk resilience adaptation").split()
OFF_TOPIC = ("protein enzyme molecular genome sequencing neural algorithm theorem graph lattice quantum photon "
             "polymer catalyst semiconductor galaxy telescope linguistics syntax poetry novel museum painting "
             "tensor optimization compiler database encryption").split()


def mini_corpus(out, seed=20240611):
    rng = random.Random(seed)
    cats = []
    for cid, vocab in MINI_HAZARDS.items():
        cats.append({"id": cid, "name": cid.replace("_", " ").title(), "taxonomy": "hazard",
                     "definition": vocab.capitalize() + "."})
    for cid, vocab in MINI_NCFS.items():
        cats.append({"id": cid, "name": cid.replace("_", " ").title(), "taxonomy": "ncf",
                     "definition": vocab.capitalize() + "."})
    write_json(out / "mini" / "categories.json", cats)

    hz = list(MINI_HAZARDS)
    nc = list(MINI_NCFS)
    docs = []
    for i in range(200):
        words = []
        kind = rng.random()
        if kind < 0.15:
            # Off-topic.
            words += rng.choices(OFF_TOPIC, k=rng.randint(20, 30))
            words += rng.choices(FILLER, k=rng.randint(5, 10))
            topical = []
        else:
            hazards = rng.sample(hz, 2 if rng.random() < 0.25 else 1)
            ncfs = rng.sample(nc, 2 if rng.random() < 0.2 else 1)
            # Relevance strength varies so some documents sit near the threshold.
            strength = rng.choice([0.5, 0.8, 1.0, 1.0, 1.2])
            for h in hazards:
                v = MINI_HAZARDS[h].split()
                words += rng.choices(v, k=max(2, int(rng.randint(10, 16) * strength)))
            for n in ncfs:
                v = MINI_NCFS[n].split()
                words += rng.choices(v, k=max(2, int(rng.randint(10, 16) * strength)))
            words += rng.choices(FILLER, k=rng.randint(6, 14))
            topical = hazards + ncfs
        rng.shuffle(words)
        title_words = words[:6]
        docs.append({
            "paper_id": f"mini-{i:04d}",
            "title": " ".join(title_words).capitalize(),
            "abstract": " ".join(words).capitalize() + ".",
            "year": 1995 + rng.randrange(28),
            "fields_of_study": ["Environmental Science"] if topical else ["Computer Science"],
        })
    write_jsonl(out / "mini" / "docs.jsonl", docs)
    write_json(out / "mini" / "config.json", {
        "docs": "docs.jsonl",
        "categories": ["categories.json"],
        "providers": ["hashed:11", "hashed:23", "hashed:37"],
        "threshold": 0.4,
        "filter_threshold": 0.4,
        "shards": 4,
        "out": "run",
    })


SYNTH_LABELS = {
    "label_a": "glacier meltwater icefield moraine crevasse calving",
    "label_b": "turbine substation transformer feeder outage voltage",
    "label_c": "estuary salinity mangrove lagoon brackish tidal",
}


def synthetic_multilabel(out, seed=7):
    rng = random.Random(seed)
    cats = [{"id": cid, "name": cid, "taxonomy": "hazard", "definition": vocab} for cid, vocab in SYNTH_LABELS.items()]
    write_json(out / "synthetic_multilabel" / "categories.json", cats)
    docs, targets = [], []
    for i in range(500):
        active = [c for c in SYNTH_LABELS if rng.random() < 0.4]
        words = rng.choices(FILLER, k=rng.randint(15, 25))
        for c in active:
            words += rng.choices(SYNTH_LABELS[c].split(), k=rng.randint(4, 8))
        rng.shuffle(words)
        doc_id = f"syn-{i:04d}"
        docs.append({"paper_id": doc_id, "title": "", "abstract": " ".join(words) + "."})
        targets.append({"doc_id": doc_id, "hazard": active, "ncf": []})
    write_jsonl(out / "synthetic_multilabel" / "docs.jsonl", docs)
    write_jsonl(out / "synthetic_multilabel" / "targets.jsonl", targets)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    args = ap.parse_args()
    out = Path(args.out)
    full_categories(out)
    mini_corpus(out)
    synthetic_multilabel(out)


if __name__ == "__main__":
    main()
