# empty file