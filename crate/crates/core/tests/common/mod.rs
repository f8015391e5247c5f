#![allow(dead_code)]

use permwatch::dex::builder::{Asm, DexBuilder, MethodSig};

pub const RESOLVER: &str = "Landroid/content/ContentResolver;";
pub const STRING: &str = "Ljava/lang/String;";
pub const URI: &str = "Landroid/net/Uri;";
pub const SB: &str = "Ljava/lang/StringBuilder;";

pub fn uri_parse() -> MethodSig {
    MethodSig::new(URI, "parse", URI, &[STRING])
}

pub fn query_sig() -> MethodSig {
    MethodSig::new(
        RESOLVER,
        "query",
        "Landroid/database/Cursor;",
        &[URI, "[Ljava/lang/String;", STRING, "[Ljava/lang/String;", STRING],
    )
}

pub fn delete_sig() -> MethodSig {
    MethodSig::new(RESOLVER, "delete", "I", &[URI, STRING, "[Ljava/lang/String;"])
}

pub fn call_sig() -> MethodSig {
    MethodSig::new(RESOLVER, "call", "Landroid/os/Bundle;", &[STRING, STRING, STRING, "Landroid/os/Bundle;"])
}

/// `r0.query(r1, null, null, null, null)` using r2..r5 as null arguments.
pub fn query(asm: Asm) -> Asm {
    asm.const4(2, 0)
        .const4(3, 0)
        .const4(4, 0)
        .const4(5, 0)
        .invoke_virtual(&[0, 1, 2, 3, 4, 5], &query_sig())
}

/// A method `run(ContentResolver, String)` with eleven registers: the
/// resolver arrives in r9 and is copied to r0, the string arrives in r10.
pub fn with_resolver(body: impl FnOnce(Asm) -> Asm) -> Asm {
    body(Asm::new(11).move_object(0, 9))
}

pub fn run_params() -> [&'static str; 2] {
    [RESOLVER, STRING]
}

/// One dex with a single `run` method in `class`.
pub fn single_method_dex(class: &str, body: Asm) -> Vec<u8> {
    let mut b = DexBuilder::new();
    b.class(class).method("run", "V", &run_params(), body);
    b.build()
}

pub struct CpropFixture {
    pub name: &'static str,
    pub dex: Vec<u8>,
    /// Authority per resolver call site in offset order.
    pub expected: Vec<Option<&'static str>>,
}

fn fx(name: &'static str, body: Asm, expected: Vec<Option<&'static str>>) -> CpropFixture {
    CpropFixture {
        name,
        dex: single_method_dex("Lcom/fx/Run;", body),
        expected,
    }
}

/// The twelve hand-built constant-propagation fixtures.
pub fn cprop_fixtures() -> Vec<CpropFixture> {
    let concat = MethodSig::new(STRING, "concat", STRING, &[STRING]);
    let sb_init = MethodSig::new(SB, "<init>", "V", &[]);
    let sb_init_str = MethodSig::new(SB, "<init>", "V", &[STRING]);
    let append = MethodSig::new(SB, "append", SB, &[STRING]);
    let to_string = MethodSig::new(SB, "toString", STRING, &[]);
    let with_path = MethodSig::new(URI, "withAppendedPath", URI, &[URI, STRING]);
    let helper = MethodSig::new("Lcom/fx/Util;", "host", STRING, &[]);
    let mutate = MethodSig::new("Lcom/fx/Util;", "tweak", "V", &[SB]);

    vec![
        fx(
            "direct_constant",
            with_resolver(|a| query(a.const_string(6, "content://com.fx.direct/items").invoke_static(&[6], &uri_parse()).move_result_object(1)).return_void()),
            vec![Some("com.fx.direct")],
        ),
        fx(
            "string_concat",
            with_resolver(|a| {
                let a = a
                    .const_string(6, "content://")
                    .const_string(7, "com.fx.concat")
                    .invoke_virtual(&[6, 7], &concat)
                    .move_result_object(6)
                    .invoke_static(&[6], &uri_parse())
                    .move_result_object(1);
                query(a).return_void()
            }),
            vec![Some("com.fx.concat")],
        ),
        fx(
            "builder_chain",
            with_resolver(|a| {
                let a = a
                    .new_instance(6, SB)
                    .invoke_direct(&[6], &sb_init)
                    .const_string(7, "content://")
                    .invoke_virtual(&[6, 7], &append)
                    .move_result_object(6)
                    .const_string(7, "com.fx.builder")
                    .invoke_virtual(&[6, 7], &append)
                    .const_string(7, "/rows")
                    .invoke_virtual(&[6, 7], &append)
                    .invoke_virtual(&[6], &to_string)
                    .move_result_object(7)
                    .invoke_static(&[7], &uri_parse())
                    .move_result_object(1);
                query(a).return_void()
            }),
            vec![Some("com.fx.builder")],
        ),
        fx(
            "builder_seeded_in_constructor",
            with_resolver(|a| {
                let a = a
                    .const_string(7, "content://com.fx.seeded")
                    .new_instance(6, SB)
                    .invoke_direct(&[6, 7], &sb_init_str)
                    .const_string(7, "/x")
                    .invoke_virtual(&[6, 7], &append)
                    .invoke_virtual(&[6], &to_string)
                    .move_result_object(7)
                    .invoke_static(&[7], &uri_parse())
                    .move_result_object(1);
                query(a).return_void()
            }),
            vec![Some("com.fx.seeded")],
        ),
        fx(
            "cross_branch_conflict",
            with_resolver(|a| {
                let a = a
                    .if_eqz(10, "other")
                    .const_string(6, "content://com.fx.left")
                    .goto("join")
                    .label("other")
                    .const_string(6, "content://com.fx.right")
                    .label("join")
                    .invoke_static(&[6], &uri_parse())
                    .move_result_object(1);
                query(a).return_void()
            }),
            vec![None],
        ),
        fx(
            "cross_branch_agreement",
            with_resolver(|a| {
                let a = a
                    .if_eqz(10, "other")
                    .const_string(6, "content://com.fx.same")
                    .goto("join")
                    .label("other")
                    .const_string(6, "content://com.fx.same")
                    .label("join")
                    .invoke_static(&[6], &uri_parse())
                    .move_result_object(1);
                query(a).return_void()
            }),
            vec![Some("com.fx.same")],
        ),
        fx(
            "dynamic_parameter",
            with_resolver(|a| query(a.invoke_static(&[10], &uri_parse()).move_result_object(1)).return_void()),
            vec![None],
        ),
        fx(
            "dynamic_call_result",
            with_resolver(|a| {
                let a = a
                    .const_string(6, "content://")
                    .invoke_static(&[], &helper)
                    .move_result_object(7)
                    .invoke_virtual(&[6, 7], &concat)
                    .move_result_object(6)
                    .invoke_static(&[6], &uri_parse())
                    .move_result_object(1);
                query(a).return_void()
            }),
            vec![None],
        ),
        fx(
            "no_resolver_call",
            with_resolver(|a| a.const_string(6, "content://com.fx.unused").invoke_static(&[6], &uri_parse()).move_result_object(1).return_void()),
            vec![],
        ),
        fx(
            "escaped_builder",
            with_resolver(|a| {
                let a = a
                    .new_instance(6, SB)
                    .invoke_direct(&[6], &sb_init)
                    .const_string(7, "content://com.fx.escape")
                    .invoke_virtual(&[6, 7], &append)
                    .invoke_static(&[6], &mutate)
                    .invoke_virtual(&[6], &to_string)
                    .move_result_object(7)
                    .invoke_static(&[7], &uri_parse())
                    .move_result_object(1);
                query(a).return_void()
            }),
            vec![None],
        ),
        fx(
            "appended_path_and_delete",
            with_resolver(|a| {
                a.const_string(6, "content://com.fx.base")
                    .invoke_static(&[6], &uri_parse())
                    .move_result_object(6)
                    .const_string(7, "items")
                    .invoke_static(&[6, 7], &with_path)
                    .move_result_object(1)
                    .const4(2, 0)
                    .const4(3, 0)
                    .invoke_virtual(&[0, 1, 2, 3], &delete_sig())
                    .return_void()
            }),
            vec![Some("com.fx.base")],
        ),
        fx(
            "call_authority_and_web_uri",
            with_resolver(|a| {
                let a = a
                    .const_string(1, "com.fx.rpc")
                    .const_string(2, "sync")
                    .const4(3, 0)
                    .const4(4, 0)
                    .invoke_virtual(&[0, 1, 2, 3, 4], &call_sig())
                    .const_string(6, "https://com.fx.web/path")
                    .invoke_static(&[6], &uri_parse())
                    .move_result_object(1);
                query(a).return_void()
            }),
            vec![Some("com.fx.rpc"), None],
        ),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Store {
    Sqlite,
    File,
}

fn cursor_query(b: &mut DexBuilder, class: &str, body: Asm) {
    b.class(class).superclass("Landroid/content/ContentProvider;").method(
        "query",
        "Landroid/database/Cursor;",
        &[URI, "[Ljava/lang/String;", STRING, "[Ljava/lang/String;", STRING],
        body,
    );
}

/// Builds `String[] cols` in r3, clobbering r4 and r9.
fn column_array(mut a: Asm, cols: &[&str]) -> Asm {
    assert!(cols.len() < 8);
    a = a.const4(9, cols.len() as i8).new_array(3, 9, "[Ljava/lang/String;");
    for (i, c) in cols.iter().enumerate() {
        a = a.const_string(4, c).const4(9, i as i8).aput_object(4, 3, 9);
    }
    a
}

/// A provider whose `query` returns a cursor projecting `cols`. Params sit
/// in r10..r15.
pub fn add_provider(b: &mut DexBuilder, class: &str, store: Store, cols: &[&str]) {
    let db = "Lcom/fx/store/Db;";
    let sqlite_db = "Landroid/database/sqlite/SQLiteDatabase;";
    let body = match store {
        Store::Sqlite => {
            let a = Asm::new(16)
                .new_instance(1, db)
                .invoke_direct(&[1], &MethodSig::new(db, "<init>", "V", &[]))
                .invoke_virtual(&[1], &MethodSig::new(db, "getReadableDatabase", sqlite_db, &[]))
                .move_result_object(1);
            column_array(a, cols)
                .const_string(2, "main.records")
                .const4(4, 0)
                .const4(5, 0)
                .const4(6, 0)
                .const4(7, 0)
                .const4(8, 0)
                .invoke_virtual(
                    &[1, 2, 3, 4, 5, 6, 7, 8],
                    &MethodSig::new(
                        sqlite_db,
                        "query",
                        "Landroid/database/Cursor;",
                        &[STRING, "[Ljava/lang/String;", STRING, "[Ljava/lang/String;", STRING, STRING, STRING],
                    ),
                )
                .move_result_object(0)
                .return_object(0)
        }
        Store::File => {
            let fis = "Ljava/io/FileInputStream;";
            let matrix = "Landroid/database/MatrixCursor;";
            let a = Asm::new(16)
                .new_instance(1, fis)
                .const_string(2, "/data/local/rows.bin")
                .invoke_direct(&[1, 2], &MethodSig::new(fis, "<init>", "V", &[STRING]));
            column_array(a, cols)
                .new_instance(0, matrix)
                .invoke_direct(&[0, 3], &MethodSig::new(matrix, "<init>", "V", &["[Ljava/lang/String;"]))
                .return_object(0)
        }
    };
    cursor_query(b, class, body);
}

/// A provider whose `query` always returns null after touching a string.
pub fn add_null_provider(b: &mut DexBuilder, class: &str) {
    cursor_query(b, class, Asm::new(16).const_string(1, "UNUSED_COLUMN").const4(0, 0).return_object(0));
}

pub fn provider_dex(class: &str, store: Store, cols: &[&str]) -> Vec<u8> {
    let mut b = DexBuilder::new();
    add_provider(&mut b, class, store, cols);
    b.build()
}

/// `run(ContentResolver, String)` querying each authority in turn.
pub fn requester_dex(class: &str, authorities: &[&str]) -> Vec<u8> {
    let mut a = Asm::new(11).move_object(0, 9);
    for auth in authorities {
        a = query(
            a.const_string(6, &format!("content://{auth}/rows"))
                .invoke_static(&[6], &uri_parse())
                .move_result_object(1),
        );
    }
    single_method_dex(class, a.return_void())
}

pub fn app_binary(apk: &[u8]) -> permwatch::custom::AppBinary {
    permwatch::custom::AppBinary {
        facts: permwatch::manifest::parse_apk(apk, None).expect("fixture parses"),
        dex: permwatch::manifest::dex_entries(apk).expect("fixture dex"),
    }
}

pub mod pairs {
    use permwatch::fixture::{ApkBuilder, ManifestEncoding};
    use permwatch::manifest::{ComponentKind, ProtectionLevel};

    use super::{provider_dex, requester_dex, Store};

    pub const COLUMN_SETS: [&[&str]; 5] = [
        &["PHONE_NUMBER", "DISPLAY_NAME"],
        &["FILE_PATH"],
        &["DIAGNOSIS", "HEART_RATE"],
        &["LATITUDE", "LONGITUDE"],
        &["ROW_VERSION"],
    ];

    #[derive(Debug, Clone)]
    pub struct Definer {
        pub package: String,
        pub permission: String,
        pub authority: String,
        pub provider_class: String,
        /// `None` leaves protectionLevel out of the manifest.
        pub level: Option<ProtectionLevel>,
        pub exported: bool,
        pub guards_provider: bool,
        pub cert: Option<String>,
        pub columns: &'static [&'static str],
    }

    #[derive(Debug, Clone)]
    pub struct Requesting {
        pub package: String,
        pub declares: Vec<String>,
        pub calls: Vec<String>,
        pub cert: Option<String>,
        pub code_class: String,
    }

    impl Definer {
        pub fn effective_normal(&self) -> bool {
            matches!(self.level, None | Some(ProtectionLevel::Normal))
        }

        pub fn apk(&self) -> Vec<u8> {
            self.apk_with(ManifestEncoding::Binary)
        }

        pub fn apk_with(&self, encoding: ManifestEncoding) -> Vec<u8> {
            let desc = format!("L{};", self.provider_class.replace('.', "/"));
            let b = ApkBuilder::new(&self.package, 3).encoding(encoding).defines(&self.permission, self.level);
            let b = if self.guards_provider {
                b.provider(&self.provider_class, &[&self.authority], Some(self.exported), Some(&self.permission))
            } else {
                b.component(ComponentKind::Activity, ".Share", Some(self.exported), Some(&self.permission))
            };
            let b = b.dex(provider_dex(&desc, Store::Sqlite, self.columns));
            match &self.cert {
                Some(c) => b.signed_by(c).build(),
                None => b.build(),
            }
        }
    }

    impl Requesting {
        pub fn apk(&self) -> Vec<u8> {
            let auths: Vec<&str> = self.calls.iter().map(String::as_str).collect();
            let desc = format!("L{};", self.code_class.replace('.', "/"));
            let mut b = ApkBuilder::new(&self.package, 7).uses("INTERNET").dex(requester_dex(&desc, &auths));
            for p in &self.declares {
                b = b.uses(p);
            }
            match &self.cert {
                Some(c) => b.signed_by(c).build(),
                None => b.build(),
            }
        }
    }

    /// Ten defining apps and twenty requesting apps covering every
    /// eligibility and linking condition.
    pub fn corpus() -> (Vec<Definer>, Vec<Requesting>) {
        let definers: Vec<Definer> = (0..10)
            .map(|i| Definer {
                package: format!("com.def{i}"),
                permission: format!("com.def{i}.permission.ACCESS"),
                authority: format!("com.def{i}.provider"),
                provider_class: format!("com.def{i}.DataProvider"),
                level: match i {
                    4 | 9 => Some(ProtectionLevel::Signature),
                    8 => Some(ProtectionLevel::Dangerous),
                    3 | 7 => None,
                    _ => Some(ProtectionLevel::Normal),
                },
                exported: i != 2,
                guards_provider: i != 6,
                cert: (i != 5).then(|| format!("dev-def{i}")),
                columns: COLUMN_SETS[i % COLUMN_SETS.len()],
            })
            .collect();
        let requesters = (0..20)
            .map(|j| {
                let t = j % 10;
                let mut targets = vec![t];
                if j % 3 == 0 {
                    targets.push((j + 3) % 10);
                }
                let declares = targets
                    .iter()
                    .filter(|_| j % 4 != 1)
                    .map(|&t| definers[t].permission.clone())
                    .collect();
                let calls = match j {
                    13 => vec!["com.nowhere.x".to_string()],
                    _ if j % 5 == 2 => Vec::new(),
                    _ => targets.iter().map(|&t| definers[t].authority.clone()).collect(),
                };
                let cert = if j % 6 == 5 {
                    definers[t].cert.clone().or_else(|| Some("dev-shared".into()))
                } else if j % 9 == 7 {
                    None
                } else {
                    Some(format!("dev-req{j}"))
                };
                Requesting {
                    package: format!("com.req{j}"),
                    declares,
                    calls,
                    cert,
                    code_class: if j % 2 == 0 { format!("com.req{j}.sync.Engine") } else { "com.flurry.sdk.Beacon".into() },
                }
            })
            .collect();
        (definers, requesters)
    }

    /// Brute-force join: (permission, exploitable, authority, exploiting).
    pub fn oracle(definers: &[Definer], requesters: &[Requesting]) -> Vec<(String, String, String, String)> {
        let mut out = Vec::new();
        for d in definers {
            let Some(dc) = &d.cert else { continue };
            if !(d.effective_normal() && d.exported && d.guards_provider) {
                continue;
            }
            for r in requesters {
                let Some(rc) = &r.cert else { continue };
                if rc == dc || r.package == d.package {
                    continue;
                }
                if r.declares.contains(&d.permission) && r.calls.contains(&d.authority) {
                    out.push((d.permission.clone(), d.package.clone(), d.authority.clone(), r.package.clone()));
                }
            }
        }
        out.sort();
        out
    }
}

pub fn manifest_fixtures() -> Vec<(String, String)> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/manifests");
    let mut out: Vec<(String, String)> = std::fs::read_dir(&dir)
        .expect("fixture dir")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|e| e == "xml"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).expect("fixture text")))
        .collect();
    out.sort();
    out
}
