"""
Turning keyboard and mouse events into tokens
=============================================

A single game tick is a set of pressed buttons plus a camera delta in
degrees. Here we squeeze it into a handful of discrete tokens and back.
"""

import numpy as np

from craftvla import ActionEvent, decode_actions, encode_action, format_tokens, parse_token_string
from craftvla.action_codec import mu_law_decode_array, mu_law_encode_array

# The camera axes go through mu-law companding before being cut into 21 bins,
# so small turns get finer resolution than large ones.
deltas = np.array([-10, -5, -2.5, -1, -0.25, 0, 0.25, 1, 2.5, 5, 10])
bins = mu_law_encode_array(deltas)
print("delta  ->", deltas)
print("bin    ->", bins)
print("center ->", np.round(mu_law_decode_array(bins), 3))

# Bin widths near zero are much narrower than at the edges.
centers = mu_law_decode_array(np.arange(21))
print("bin spacing:", np.round(np.diff(centers), 3))

# Encoding a tick: buttons come first in a fixed order, then the camera pair.
tick = ActionEvent(frozenset({"use"}), (-4.3, -5.8))
text = format_tokens(encode_action(tick))
print(text)

# A tick with no buttons and a centered camera collapses to two tokens.
print(format_tokens(encode_action(ActionEvent())))

# Decoding snaps the camera to bin centers; the buttons survive untouched.
(back,) = decode_actions(parse_token_string(text))
print(sorted(back.buttons), np.round(back.camera, 3))
