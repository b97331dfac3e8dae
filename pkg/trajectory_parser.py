"""
Reads and writes the trajectory mini-language used on the command line.

    p,w*          play once, then work forever
    p5,(w9,p)*    five plays, then nine works and a play, repeated

Items are separated by commas, a trailing count repeats an action or a group,
and `*` marks the item where the repeating cycle starts.
"""

import re

from errors import TrajectoryTokenError


class TrajectoryParser:
    def __init__(self, action_names):
        self.actions = {name: i for i, name in enumerate(action_names)}
        self.names = list(action_names)
        self.token_pattern = re.compile(r"\s*(?:(\()|(\))|(,)|(\*)|([^\s(),*]+))")
        self.count_pattern = re.compile(r"^(.*?)(\d+)$")

    def _tokens(self, text):
        pos, tokens = 0, []
        text = text.strip()
        while pos < len(text):
            match = self.token_pattern.match(text, pos)
            if not match or match.end() == pos:
                raise TrajectoryTokenError(f"cannot read trajectory at '{text[pos:]}'")
            tokens.append(next(t for t in match.groups() if t is not None))
            pos = match.end()
        return tokens

    def _word(self, word):
        if word in self.actions:
            return [self.actions[word]]
        match = self.count_pattern.match(word)
        if match and match.group(1) in self.actions:
            count = int(match.group(2))
            if count < 1:
                raise TrajectoryTokenError(f"repeat count must be positive in '{word}'")
            return [self.actions[match.group(1)]] * count
        raise TrajectoryTokenError(f"unknown action '{word}' (known: {', '.join(self.names)})")

    def _sequence(self, tokens, pos, nested):
        """Returns (items, pos); items are (actions, starred)."""
        items = []
        while True:
            if pos >= len(tokens):
                raise TrajectoryTokenError("trajectory ends after a comma" if items else "empty trajectory")
            tok = tokens[pos]
            if tok == "(":
                inner, pos = self._sequence(tokens, pos + 1, True)
                actions = [a for group, _ in inner for a in group]
                if pos < len(tokens) and tokens[pos].isdigit():
                    count = int(tokens[pos])
                    if count < 1:
                        raise TrajectoryTokenError("group repeat count must be positive")
                    actions = actions * count
                    pos += 1
            elif tok in (")", ",", "*"):
                raise TrajectoryTokenError(f"unexpected '{tok}'")
            else:
                actions = self._word(tok)
                pos += 1
            starred = pos < len(tokens) and tokens[pos] == "*"
            if starred:
                if nested:
                    raise TrajectoryTokenError("'*' cannot appear inside a group")
                pos += 1
            items.append((actions, starred))
            if pos >= len(tokens):
                if nested:
                    raise TrajectoryTokenError("unclosed '('")
                return items, pos
            if tokens[pos] == ")":
                if not nested:
                    raise TrajectoryTokenError("unmatched ')'")
                return items, pos + 1
            if tokens[pos] != ",":
                raise TrajectoryTokenError(f"expected ',' before '{tokens[pos]}'")
            pos += 1

    def parse(self, text):
        """Returns (prefix_actions, cycle_actions) as action indices."""
        tokens = self._tokens(text)
        if not tokens:
            raise TrajectoryTokenError("empty trajectory")
        items, _ = self._sequence(tokens, 0, False)
        starts = [i for i, (_, starred) in enumerate(items) if starred]
        if len(starts) > 1:
            raise TrajectoryTokenError("only one '*' is allowed")
        cut = starts[0] if starts else len(items)
        prefix = [a for actions, _ in items[:cut] for a in actions]
        cycle = [a for actions, _ in items[cut:] for a in actions]
        return prefix, cycle


def _runs(actions, names):
    out = []
    i = 0
    while i < len(actions):
        j = i
        while j < len(actions) and actions[j] == actions[i]:
            j += 1
        count = j - i
        out.append(names[actions[i]] + (str(count) if count > 1 else ""))
        i = j
    return out


def format_trajectory(trajectory, action_names):
    prefix, cycle = trajectory.actions()
    parts = _runs(prefix, action_names)
    if len(cycle) == 1:
        parts.append(action_names[cycle[0]] + "*")
    elif cycle:
        parts.append("(" + ",".join(_runs(cycle, action_names)) + ")*")
    return ",".join(parts)
