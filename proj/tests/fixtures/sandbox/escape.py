# Tries to leave the working directory. Under confinement every attempt fails.
import os
import sys

targets = [os.path.join("..", "..", "escaped.txt"), os.path.join(os.path.dirname(os.getcwd()), "escaped.txt")]
written = []
for target in targets:
    try:
        with open(target, "w") as fh:
            fh.write("out")
        written.append(target)
    except OSError as exc:
        print("blocked:", type(exc).__name__)
with open("inside.txt", "w") as fh:
    fh.write("in")
print("inside ok")
sys.exit(1 if written else 0)
