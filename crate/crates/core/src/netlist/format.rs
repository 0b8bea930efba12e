use super::*;

fn push_line(out: &mut String, indent: &str, code: &str, comment: Option<&str>) {
    out.push_str(indent);
    out.push_str(code);
    if let Some(c) = comment {
        if !code.is_empty() {
            out.push(' ');
        }
        out.push_str(c);
    }
    out.push('\n');
}

fn with_args(head: String, args: &[Arg]) -> String {
    args.iter().fold(head, |mut s, a| {
        s.push(' ');
        s.push_str(&a.key);
        s.push('=');
        s.push_str(&a.raw);
        s
    })
}

fn statement_code(s: &Statement) -> String {
    with_args(format!("{} {}", s.keyword.as_str(), s.name), &s.args)
}

/// Collapses runs of blank lines and drops leading and trailing ones.
fn tidy_blanks<T>(items: &[T], is_blank: impl Fn(&T) -> bool) -> Vec<&T> {
    let mut out: Vec<&T> = Vec::new();
    for item in items {
        if is_blank(item) && out.last().is_none_or(|last| is_blank(last)) {
            continue;
        }
        out.push(item);
    }
    while out.last().is_some_and(|last| is_blank(last)) {
        out.pop();
    }
    out
}

/// Canonical text: single spaces, `key=value` without padding, literals kept
/// as written, one blank line at most between statements, block bodies
/// indented by two spaces.
pub fn format(doc: &NetlistDocument) -> String {
    let mut out = String::new();
    for item in tidy_blanks(&doc.items, |i| matches!(i, Item::Blank)) {
        match item {
            Item::Blank => out.push('\n'),
            Item::Comment(c) => push_line(&mut out, "", "", Some(c)),
            Item::Statement(s) => push_line(&mut out, "", &statement_code(s), s.comment.as_deref()),
            Item::Sweep(block) => {
                let header = format!("{} {{", statement_code(&block.header));
                push_line(&mut out, "", &header, block.header.comment.as_deref());
                for inner in tidy_blanks(&block.body, |i| matches!(i, BlockItem::Blank)) {
                    match inner {
                        BlockItem::Blank => out.push('\n'),
                        BlockItem::Comment(c) => push_line(&mut out, "  ", "", Some(c)),
                        BlockItem::Axis(a) => push_line(
                            &mut out,
                            "  ",
                            &with_args(a.keyword.clone(), &a.args),
                            a.comment.as_deref(),
                        ),
                    }
                }
                push_line(&mut out, "", "}", block.close_comment.as_deref());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_spacing_and_blanks() {
        let messy = "\n\n  coherent   a  power = 1e6   # source\n\n\n\npbs_combine s h=a v=a theta=90deg\nsweep t in=s {\n\n    theta points=8\n\n}\n\n";
        let (doc, _) = parse(messy).unwrap();
        let text = format(&doc);
        assert_eq!(
            text,
            "coherent a power=1e6 # source\n\npbs_combine s h=a v=a theta=90deg\nsweep t in=s {\n  theta points=8\n}\n"
        );
        let (again, _) = parse(&text).unwrap();
        assert_eq!(format(&again), text);
    }
}
