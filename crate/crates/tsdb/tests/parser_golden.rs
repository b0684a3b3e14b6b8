//! Golden cases for the query parser: accepted inputs render back to a
//! canonical form, rejected inputs fail at a fixed byte offset.

use minimon_tsdb::parse_query;
use proptest::prelude::*;

const ACCEPT: &[(&str, &str)] = &[
    ("cpu", "cpu"),
    ("  cpu  ", "cpu"),
    (r#"cpu{host="a"}"#, r#"cpu{host="a"}"#),
    (r#"cpu{host="a",site="T1"}"#, r#"cpu{host="a",site="T1"}"#),
    (r#"cpu { host = "a" , site != "T2" }"#, r#"cpu{host="a",site!="T2"}"#),
    (r#"cpu{site=~"T[12]_.*"}"#, r#"cpu{site=~"T[12]_.*"}"#),
    (r#"cpu{host=""}"#, r#"cpu{host=""}"#),
    (r#"cpu{msg="say \"hi\" \\ ok"}"#, r#"cpu{msg="say \"hi\" \\ ok"}"#),
    ("rate(jobs_completed[1h])", "rate(jobs_completed[1h])"),
    ("avg_over_time(cpu[5m])", "avg_over_time(cpu[5m])"),
    ("max_over_time(cpu[12m])", "max_over_time(cpu[12m])"),
    ("min_over_time(cpu[1d])", "min_over_time(cpu[1d])"),
    ("sum_over_time(cpu[30s])", "sum_over_time(cpu[30s])"),
    ("count_over_time(cpu[7d])", "count_over_time(cpu[1w])"),
    ("rate(cpu[90m])", "rate(cpu[90m])"),
    ("rate(cpu[120m])", "rate(cpu[2h])"),
    ("sum by (site) rate(jobs_completed[1h])", "sum by (site) rate(jobs_completed[1h])"),
    ("avg by (site, host) cpu", "avg by (site, host) cpu"),
    ("max by(site) max_over_time(cpu{host!=\"x\"}[5m])", "max by (site) max_over_time(cpu{host!=\"x\"}[5m])"),
    ("min by (a,b,c) cpu", "min by (a, b, c) cpu"),
    ("sum", "sum"),
    ("rate", "rate"),
    ("sum{x=\"1\"}", "sum{x=\"1\"}"),
    ("sum by (site) sum", "sum by (site) sum"),
    ("by", "by"),
    ("_private_metric{_t=\"v\"}", "_private_metric{_t=\"v\"}"),
];

const REJECT: &[(&str, usize)] = &[
    ("", 0),
    ("   ", 3),
    ("cpu{host=}", 9),
    ("cpu{host}", 8),
    ("cpu{host==\"a\"}", 9),
    ("cpu{host=\"a\"", 12),
    ("cpu{host=\"a\",}", 13),
    ("cpu{}", 4),
    ("cpu{host=\"a}", 9),
    ("cpu{1host=\"a\"}", 4),
    ("cpu{site=~\"(\"}", 10),
    ("cpu{host=\"\\q\"}", 11),
    ("cpu[5m]", 3),
    ("rate(cpu)", 8),
    ("rate(cpu[5m]", 12),
    ("rate(cpu[])", 9),
    ("rate(cpu[0m])", 9),
    ("rate(cpu[5x])", 9),
    ("rate(cpu[-5m])", 9),
    ("sum by site cpu", 7),
    ("sum by () cpu", 8),
    ("sum by (site cpu", 13),
    ("sum by (site)", 13),
    ("cpu extra", 4),
    ("9cpu", 0),
    ("cpu{host=\"a\"} or mem", 14),
    ("rate(cpu[5m]) + 1", 14),
    ("nofunc(cpu[5m])", 6),
];

#[test]
fn accepted_queries_render_canonically() {
    for (input, canonical) in ACCEPT {
        let ast = parse_query(input).unwrap_or_else(|e| panic!("{input:?}: {e}"));
        assert_eq!(ast.to_string(), *canonical, "input {input:?}");
        assert_eq!(parse_query(canonical).unwrap(), ast, "canonical form of {input:?} reparses differently");
    }
}

#[test]
fn rejected_queries_report_position() {
    for (input, pos) in REJECT {
        match parse_query(input) {
            Ok(ast) => panic!("{input:?} parsed as {ast:?}"),
            Err(e) => assert_eq!(e.pos, *pos, "{input:?}: {e}"),
        }
    }
}

#[test]
fn golden_counts() {
    assert!(ACCEPT.len() + REJECT.len() >= 25);
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z_][a-z0-9_]{0,6}"
}

fn query_text() -> impl Strategy<Value = String> {
    let matcher = (ident(), prop_oneof![Just("="), Just("!="), Just("=~")], "[a-zA-Z0-9 ._\"\\\\]{0,6}").prop_map(|(t, op, v)| {
        let v = if op == "=~" { regex::escape(&v) } else { v };
        format!("{t}{op}\"{}\"", v.replace('\\', "\\\\").replace('"', "\\\""))
    });
    (
        prop::option::of((prop_oneof![Just("sum"), Just("avg"), Just("max"), Just("min")], prop::collection::vec(ident(), 1..3))),
        prop::option::of((
            prop_oneof![Just("rate"), Just("avg_over_time"), Just("count_over_time")],
            (1u32..500, prop_oneof![Just("s"), Just("m"), Just("h"), Just("d")]),
        )),
        ident(),
        prop::collection::vec(matcher, 0..3),
    )
        .prop_map(|(agg, func, name, matchers)| {
            let mut sel = name;
            if !matchers.is_empty() {
                sel = format!("{sel}{{{}}}", matchers.join(","));
            }
            let body = match func {
                Some((f, (n, u))) => format!("{f}({sel}[{n}{u}])"),
                None => sel,
            };
            match agg {
                Some((op, by)) => format!("{op} by ({}) {body}", by.join(",")),
                None => body,
            }
        })
}

proptest! {
    #[test]
    fn display_round_trips(q in query_text()) {
        let ast = parse_query(&q).map_err(|e| TestCaseError::fail(format!("{q}: {e}")))?;
        let again = parse_query(&ast.to_string()).unwrap();
        prop_assert_eq!(again, ast);
    }

    #[test]
    fn arbitrary_input_never_panics(s in "\\PC{0,40}") {
        if let Err(e) = parse_query(&s) {
            prop_assert!(e.pos <= s.len());
        }
    }
}
