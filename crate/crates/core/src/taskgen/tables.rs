//! Small built-in word tables. Multi-word entries use `_` so each stays one token.

pub struct MappingTable {
    pub name: &'static str,
    pub pairs: &'static [(&'static str, &'static str)],
}

pub const FRENCH_ENGLISH: MappingTable = MappingTable {
    name: "french_english",
    pairs: &[
        ("bonjour", "hello"),
        ("merci", "thanks"),
        ("chat", "cat"),
        ("chien", "dog"),
        ("maison", "house"),
        ("eau", "water"),
        ("pain", "bread"),
        ("livre", "book"),
        ("rouge", "red"),
        ("vert", "green"),
        ("bleu", "blue"),
        ("soleil", "sun"),
        ("lune", "moon"),
        ("arbre", "tree"),
        ("fleur", "flower"),
        ("voiture", "car"),
        ("ville", "city"),
        ("homme", "man"),
        ("femme", "woman"),
        ("enfant", "child"),
        ("pomme", "apple"),
        ("lait", "milk"),
        ("porte", "door"),
        ("nuit", "night"),
        ("jour", "day"),
        ("ami", "friend"),
        ("mer", "sea"),
        ("feu", "fire"),
    ],
};

pub const ENGLISH_SPANISH: MappingTable = MappingTable {
    name: "english_spanish",
    pairs: &[
        ("hello", "hola"),
        ("thank_you", "gracias"),
        ("cat", "gato"),
        ("dog", "perro"),
        ("house", "casa"),
        ("water", "agua"),
        ("bread", "pan"),
        ("book", "libro"),
        ("red", "rojo"),
        ("green", "verde"),
        ("blue", "azul"),
        ("sun", "sol"),
        ("moon", "luna"),
        ("tree", "arbol"),
        ("flower", "flor"),
        ("car", "coche"),
        ("city", "ciudad"),
        ("man", "hombre"),
        ("woman", "mujer"),
        ("child", "nino"),
        ("apple", "manzana"),
        ("milk", "leche"),
        ("door", "puerta"),
        ("night", "noche"),
        ("day", "dia"),
        ("friend", "amigo"),
        ("sea", "mar"),
        ("fire", "fuego"),
    ],
};

pub const ANTONYMS: MappingTable = MappingTable {
    name: "antonyms",
    pairs: &[
        ("hot", "cold"),
        ("big", "small"),
        ("up", "down"),
        ("fast", "slow"),
        ("happy", "sad"),
        ("light", "dark"),
        ("old", "new"),
        ("rich", "poor"),
        ("early", "late"),
        ("hard", "soft"),
        ("high", "low"),
        ("long", "short"),
        ("open", "closed"),
        ("full", "empty"),
        ("strong", "weak"),
        ("wet", "dry"),
        ("true", "false"),
        ("good", "bad"),
        ("near", "far"),
        ("thick", "thin"),
        ("loud", "quiet"),
        ("clean", "dirty"),
        ("first", "last"),
        ("win", "lose"),
        ("push", "pull"),
        ("buy", "sell"),
        ("love", "hate"),
        ("in", "out"),
    ],
};

pub const SINGULAR_PLURAL: MappingTable = MappingTable {
    name: "singular_plural",
    pairs: &[
        ("dog", "dogs"),
        ("cat", "cats"),
        ("box", "boxes"),
        ("child", "children"),
        ("mouse", "mice"),
        ("city", "cities"),
        ("man", "men"),
        ("woman", "women"),
        ("foot", "feet"),
        ("tooth", "teeth"),
        ("leaf", "leaves"),
        ("knife", "knives"),
        ("bus", "buses"),
        ("house", "houses"),
        ("book", "books"),
        ("tree", "trees"),
        ("car", "cars"),
        ("apple", "apples"),
        ("day", "days"),
        ("night", "nights"),
        ("friend", "friends"),
        ("flower", "flowers"),
        ("door", "doors"),
        ("goose", "geese"),
        ("baby", "babies"),
        ("wolf", "wolves"),
        ("hero", "heroes"),
        ("glass", "glasses"),
    ],
};

pub const PRESENT_PAST: MappingTable = MappingTable {
    name: "present_past",
    pairs: &[
        ("jump", "jumped"),
        ("walk", "walked"),
        ("run", "ran"),
        ("eat", "ate"),
        ("see", "saw"),
        ("go", "went"),
        ("take", "took"),
        ("give", "gave"),
        ("make", "made"),
        ("write", "wrote"),
        ("read", "read_past"),
        ("sing", "sang"),
        ("swim", "swam"),
        ("drink", "drank"),
        ("play", "played"),
        ("talk", "talked"),
        ("open", "opened"),
        ("close", "closed"),
        ("buy", "bought"),
        ("think", "thought"),
        ("teach", "taught"),
        ("fly", "flew"),
        ("grow", "grew"),
        ("draw", "drew"),
        ("speak", "spoke"),
        ("sleep", "slept"),
        ("win", "won"),
        ("sell", "sold"),
    ],
};

pub const COUNTRY_CAPITAL: MappingTable = MappingTable {
    name: "country_capital",
    pairs: &[
        ("France", "Paris"),
        ("Japan", "Tokyo"),
        ("Italy", "Rome"),
        ("Spain", "Madrid"),
        ("Germany", "Berlin"),
        ("Egypt", "Cairo"),
        ("Kenya", "Nairobi"),
        ("Peru", "Lima"),
        ("Chile", "Santiago"),
        ("Canada", "Ottawa"),
        ("Russia", "Moscow"),
        ("China", "Beijing"),
        ("India", "New_Delhi"),
        ("Brazil", "Brasilia"),
        ("Mexico", "Mexico_City"),
        ("Greece", "Athens"),
        ("Norway", "Oslo"),
        ("Sweden", "Stockholm"),
        ("Finland", "Helsinki"),
        ("Poland", "Warsaw"),
        ("Austria", "Vienna"),
        ("Portugal", "Lisbon"),
        ("Ireland", "Dublin"),
        ("Turkey", "Ankara"),
        ("Thailand", "Bangkok"),
        ("Vietnam", "Hanoi"),
        ("Cuba", "Havana"),
        ("Iran", "Tehran"),
    ],
};

pub const ALL_TABLES: [&MappingTable; 6] = [
    &FRENCH_ENGLISH,
    &ENGLISH_SPANISH,
    &ANTONYMS,
    &SINGULAR_PLURAL,
    &PRESENT_PAST,
    &COUNTRY_CAPITAL,
];

/// Every distinct word across all tables, in first-seen order.
pub fn all_words() -> Vec<&'static str> {
    let mut seen = std::collections::HashSet::new();
    let mut words = Vec::new();
    for table in ALL_TABLES {
        for (a, b) in table.pairs {
            for w in [*a, *b] {
                if seen.insert(w) {
                    words.push(w);
                }
            }
        }
    }
    words
}
