//! Built-in GLES-style codebook.
//!
//! Item ids and German question wording follow the GLES Cross-Section
//! Cumulation codebook for the predictors used here. Answer options are a
//! compact stand-in (the real codebook has more granular categories), and
//! the `bundesland` column exists only so the region convenience sample can
//! be drawn; it is never shown to an imputer.

use std::collections::BTreeMap;

use crate::survey::{Codebook, Item, MissingCode};
use crate::vote::VoteChoice;

pub const YEAR: &str = "year";
pub const AGE: &str = "d2";
pub const GENDER: &str = "d1";
pub const EDUCATION: &str = "d5";
pub const INCOME: &str = "d43";
pub const EMPLOYMENT: &str = "d27";
pub const RELIGIOSITY: &str = "d26";
pub const LEFT_RIGHT: &str = "v74";
pub const PARTY_ID: &str = "v25a";
pub const PARTY_ID_STRENGTH: &str = "v26";
pub const RESIDENCY: &str = "ostwest2";
pub const IMMIGRATION: &str = "v88";
pub const INEQUALITY: &str = "v72d";
pub const REGION: &str = "bundesland";
pub const VOTE: &str = "vote";

pub const STUDENT: &str = "in Ausbildung/Studium";
pub const UNEMPLOYED: &str = "arbeitslos";
pub const THURINGIA: &str = "Thüringen";
pub const NO_PARTY: &str = "keiner Partei";

pub const NO_ANSWER: &str = "-99";
pub const DONT_KNOW: &str = "-98";
pub const NOT_APPLICABLE: &str = "-97";
pub const ABORTED: &str = "-93";

pub const VOTE_LABELS: [&str; 8] = [
    "CDU/CSU",
    "SPD",
    "Grüne",
    "FDP",
    "Die Linke",
    "AfD",
    "andere Partei",
    "Nichtwähler",
];

pub const PARTY_ID_OPTIONS: [&str; 8] = [
    "CDU/CSU",
    "SPD",
    "Bündnis 90/Die Grünen",
    "FDP",
    "Die Linke",
    "AfD",
    "andere Partei",
    NO_PARTY,
];

pub const EAST_STATES: [&str; 6] = [
    "Berlin (Ost)",
    "Brandenburg",
    "Mecklenburg-Vorpommern",
    "Sachsen",
    "Sachsen-Anhalt",
    THURINGIA,
];

pub const WEST_STATES: [&str; 11] = [
    "Baden-Württemberg",
    "Bayern",
    "Berlin (West)",
    "Bremen",
    "Hamburg",
    "Hessen",
    "Niedersachsen",
    "Nordrhein-Westfalen",
    "Rheinland-Pfalz",
    "Saarland",
    "Schleswig-Holstein",
];

fn item(id: &str, feature: &str, question: &str, options: &[&str]) -> Item {
    Item {
        id: id.to_string(),
        question_text: question.to_string(),
        feature_name: feature.to_string(),
        options: options.iter().map(|s| s.to_string()).collect(),
        predictor: true,
    }
}

pub fn left_right_options() -> Vec<String> {
    (1..=11)
        .map(|i| match i {
            1 => "1 links".to_string(),
            11 => "11 rechts".to_string(),
            i => i.to_string(),
        })
        .collect()
}

pub fn immigration_options() -> Vec<String> {
    (1..=11)
        .map(|i| match i {
            1 => "1 Zuzugsmöglichkeiten erleichtern".to_string(),
            11 => "11 Zuzugsmöglichkeiten einschränken".to_string(),
            i => i.to_string(),
        })
        .collect()
}

/// The default codebook used by the synthetic fixture and the default grid.
pub fn codebook() -> Codebook {
    let mut region: Vec<&str> = WEST_STATES.to_vec();
    region.extend(EAST_STATES);
    let mut target: Vec<&str> = VOTE_LABELS.to_vec();
    target.extend(["ungültig gewählt", "weiß nicht"]);

    let mut left_right = item(
        LEFT_RIGHT,
        "left_right",
        "Und wie ist das mit Ihnen selbst? Wo würden Sie sich auf der Skala von 1 bis 11 einordnen?",
        &[],
    );
    left_right.options = left_right_options();
    let mut immigration = item(
        IMMIGRATION,
        "immigration",
        "Und wie ist Ihre Position zum Thema Zuzugsmöglichkeiten für Ausländer? Bitte benutzen Sie diese Skala.",
        &[],
    );
    immigration.options = immigration_options();
    let mut bundesland = item(REGION, "region", "Bundesland der Befragten", &region);
    bundesland.predictor = false;

    let items = vec![
        item(YEAR, "year", "Erhebungsjahr", &["2017"]),
        item(
            AGE,
            "age",
            "Sagen Sie mir bitte, wie alt Sie sind.",
            &["18-29 Jahre", "30-44 Jahre", "45-59 Jahre", "60-74 Jahre", "75 Jahre und älter"],
        ),
        item(
            GENDER,
            "gender",
            "[Interviewer] Ist die Zielperson männlich oder weiblich?",
            &["männlich", "weiblich"],
        ),
        item(
            EDUCATION,
            "education",
            "Welchen höchsten allgemeinbildenden Schulabschluss haben Sie?",
            &[
                "ohne Abschluss",
                "Hauptschulabschluss",
                "Realschulabschluss",
                "Fachhochschulreife",
                "Abitur",
                "noch Schüler",
            ],
        ),
        item(
            INCOME,
            "income",
            "Wie hoch ist das monatliche Netto-Einkommen IHRES HAUSHALTES INSGESAMT? Ich meine dabei die Summe, die nach Abzug von Steuern und Sozialversicherungsbeiträgen übrig bleibt. Bitte ordnen Sie Ihr Haushaltseinkommen in die Kategorien der Liste ein und nennen mir den Buchstaben.",
            &[
                "unter 1.000 Euro",
                "1.000 bis unter 2.000 Euro",
                "2.000 bis unter 3.000 Euro",
                "3.000 bis unter 4.000 Euro",
                "4.000 Euro und mehr",
            ],
        ),
        item(
            EMPLOYMENT,
            "employment",
            "Nun weiter mit der Erwerbstätigkeit und Ihrem Beruf. Was von dieser Liste trifft auf Sie zu?",
            &[
                "voll erwerbstätig",
                "teilzeit erwerbstätig",
                STUDENT,
                UNEMPLOYED,
                "Rentner/Pensionär",
                "Hausfrau/Hausmann",
                "sonstiges",
            ],
        ),
        item(
            RELIGIOSITY,
            "religiosity",
            "Was würden Sie von sich sagen? Sind Sie überhaupt nicht religiös, nicht sehr religiös, etwas religiös oder sehr religiös?",
            &["überhaupt nicht religiös", "nicht sehr religiös", "etwas religiös", "sehr religiös"],
        ),
        left_right,
        item(
            PARTY_ID,
            "party_identification",
            "Und nun noch einmal kurz zu den politischen Parteien. In Deutschland neigen viele Leute längere Zeit einer bestimmten politischen Partei zu, obwohl sie auch ab und zu eine andere Partei wählen. Wie ist das bei Ihnen: Neigen Sie - ganz allgemein gesprochen - einer bestimmten Partei zu? Und wenn ja, welcher?",
            &PARTY_ID_OPTIONS,
        ),
        item(
            PARTY_ID_STRENGTH,
            "party_identification_strength",
            "Wie stark oder wie schwach neigen Sie - alles zusammengenommen - dieser Partei zu: sehr stark, ziemlich stark, mäßig, ziemlich schwach oder sehr schwach?",
            &["sehr stark", "ziemlich stark", "mäßig", "ziemlich schwach", "sehr schwach"],
        ),
        item(
            RESIDENCY,
            "residency",
            "Diese Variable gibt an, ob der/die Befragte in Ost- oder Westdeutschland lebt.",
            &["Westdeutschland", "Ostdeutschland"],
        ),
        immigration,
        item(
            INEQUALITY,
            "reduce_inequality",
            "Es gibt zu verschiedenen politischen Themen unterschiedliche Meinungen. Wie ist das bei Ihnen: Was halten Sie von folgenden Aussagen? Bitte antworten Sie anhand der Liste. (D) Die Regierung sollte Maßnahmen ergreifen, um die Einkommensunterschiede zu verringern.",
            &[
                "stimme voll und ganz zu",
                "stimme eher zu",
                "teils/teils",
                "stimme eher nicht zu",
                "stimme überhaupt nicht zu",
            ],
        ),
        bundesland,
        item(VOTE, "vote_choice", "Welcher Partei haben Sie Ihre Zweitstimme gegeben?", &target),
    ];

    let vote_labels: BTreeMap<VoteChoice, String> = VoteChoice::ALL
        .into_iter()
        .zip(VOTE_LABELS)
        .map(|(v, l)| (v, l.to_string()))
        .collect();

    Codebook {
        id_column: "id".to_string(),
        target_item: VOTE.to_string(),
        vote_labels,
        missing_codes: vec![
            MissingCode {
                code: NO_ANSWER.to_string(),
                meaning: "keine Angabe".to_string(),
            },
            MissingCode {
                code: DONT_KNOW.to_string(),
                meaning: "weiß nicht".to_string(),
            },
            MissingCode {
                code: NOT_APPLICABLE.to_string(),
                meaning: "trifft nicht zu".to_string(),
            },
            MissingCode {
                code: ABORTED.to_string(),
                meaning: "Interview abgebrochen".to_string(),
            },
        ],
        items,
    }
    .validated()
    .expect("built-in codebook is valid")
}
